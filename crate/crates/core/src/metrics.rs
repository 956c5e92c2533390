//! Log hypervolume difference and cross-seed statistics.

use crate::error::Result;
use crate::hypervolume::{hv, FrontSet};

/// `ln(hv(reference) − hv(archive))`, or `None` once the archive front's
/// hypervolume reaches the reference.
pub fn lhd(archive_front: &FrontSet, reference_front: &FrontSet, rho: &[f64]) -> Result<Option<f64>> {
    Ok(lhd_from_hv(hv(archive_front, rho)?, hv(reference_front, rho)?))
}

pub fn lhd_from_hv(archive_hv: f64, reference_hv: f64) -> Option<f64> {
    let d = reference_hv - archive_hv;
    (d > 0.0).then(|| d.ln())
}

/// Whether a trace never increases and has `None` only as a suffix.
pub fn is_monotone_trace(trace: &[Option<f64>]) -> bool {
    let mut prev = f64::INFINITY;
    let mut seen_null = false;
    for v in trace {
        match v {
            None => seen_null = true,
            Some(_) if seen_null => return false,
            Some(x) => {
                if !(*x <= prev) {
                    return false;
                }
                prev = *x;
            }
        }
    }
    true
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
