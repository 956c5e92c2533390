//! Pareto dominance, exact hypervolume for two and three objectives,
//! hypervolume improvement and sequential-greedy batch selection.
//!
//! All objectives are minimized. A point contributes to the hypervolume only
//! if it is strictly better than the reference point in every coordinate;
//! anything else is clipped out before the sweep.

use crate::error::{Error, Result};
use crate::par::Execution;

/// `a` dominates `b`: no worse everywhere and not identical.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).all(|(x, y)| x <= y) && a != b
}

/// `a` is no worse than `b` in every coordinate (equality allowed).
pub fn weakly_dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

/// A set of mutually non-dominated objective vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrontSet {
    points: Vec<Vec<f64>>,
}

impl FrontSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Keeps the non-dominated subset of `points`; see [`non_dominated`].
    pub fn from_points(points: &[Vec<f64>]) -> Self {
        non_dominated(points)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.points
    }

    /// Inserts `p`, dropping any members it dominates. Returns false (and
    /// leaves the set untouched) if `p` is weakly dominated by a member.
    pub fn insert(&mut self, p: Vec<f64>) -> bool {
        if self.points.iter().any(|q| weakly_dominates(q, &p)) {
            return false;
        }
        self.points.retain(|q| !dominates(&p, q));
        self.points.push(p);
        true
    }
}

/// Indices of the maximal non-dominated subset, in input order. Exact
/// duplicates collapse onto their first occurrence.
pub fn non_dominated_indices(points: &[Vec<f64>]) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let m = points[0].len();
    let mut keep = vec![false; points.len()];
    if m == 2 {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            points[a][0]
                .total_cmp(&points[b][0])
                .then(points[a][1].total_cmp(&points[b][1]))
                .then(a.cmp(&b))
        });
        let mut best = f64::INFINITY;
        for i in order {
            if points[i][1] < best {
                best = points[i][1];
                keep[i] = true;
            }
        }
    } else {
        for (i, p) in points.iter().enumerate() {
            keep[i] = !points
                .iter()
                .enumerate()
                .any(|(j, q)| dominates(q, p) || (j < i && q == p));
        }
    }
    (0..points.len()).filter(|&i| keep[i]).collect()
}

/// Maximal non-dominated subset of `points`, duplicates collapsed.
pub fn non_dominated(points: &[Vec<f64>]) -> FrontSet {
    FrontSet {
        points: non_dominated_indices(points)
            .into_iter()
            .map(|i| points[i].clone())
            .collect(),
    }
}

fn check_dims(m: usize, rho: &[f64]) -> Result<()> {
    if !(2..=3).contains(&m) {
        return Err(Error::UnsupportedMetric(format!(
            "exact hypervolume is implemented for 2 or 3 objectives, got {m}"
        )));
    }
    if rho.len() != m {
        return Err(Error::Argument(format!(
            "reference point has {} coordinates, points have {m}",
            rho.len()
        )));
    }
    if rho.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("reference point must be finite".into()));
    }
    Ok(())
}

fn inside<'a>(points: impl IntoIterator<Item = &'a Vec<f64>>, rho: &[f64]) -> Vec<&'a [f64]> {
    points
        .into_iter()
        .filter(|p| p.iter().zip(rho).all(|(a, r)| a < r))
        .map(|p| p.as_slice())
        .collect()
}

/// Staircase area for two objectives. Tolerates dominated inputs.
fn sweep_2d(pts: &mut [&[f64]], rho: &[f64]) -> f64 {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut level = rho[1];
    for p in pts.iter() {
        if p[1] < level {
            area += (rho[0] - p[0]) * (level - p[1]);
            level = p[1];
        }
    }
    area
}

/// Sweep along the third objective, maintaining the 2-D staircase of the
/// points passed so far (sorted by f1 ascending, f2 strictly descending).
fn sweep_3d(pts: &mut [&[f64]], rho: &[f64]) -> f64 {
    pts.sort_by(|a, b| a[2].total_cmp(&b[2]));
    let mut stair: Vec<[f64; 2]> = Vec::new();
    let mut area = 0.0;
    let mut volume = 0.0;
    for (k, p) in pts.iter().enumerate() {
        let q = [p[0], p[1]];
        if !stair.iter().any(|s| s[0] <= q[0] && s[1] <= q[1]) {
            stair.retain(|s| !(q[0] <= s[0] && q[1] <= s[1]));
            let pos = stair.partition_point(|s| s[0] < q[0]);
            stair.insert(pos, q);
            area = 0.0;
            let mut level = rho[1];
            for s in &stair {
                area += (rho[0] - s[0]) * (level - s[1]);
                level = s[1];
            }
        }
        let next = pts.get(k + 1).map_or(rho[2], |n| n[2]);
        volume += area * (next - p[2]);
    }
    volume
}

fn hv_raw(points: Vec<&[f64]>, rho: &[f64]) -> f64 {
    let mut pts = points;
    if pts.is_empty() {
        return 0.0;
    }
    match rho.len() {
        2 => sweep_2d(&mut pts, rho),
        _ => sweep_3d(&mut pts, rho),
    }
}

/// Hypervolume of an arbitrary point list (dominated points are harmless).
pub fn hv_points(points: &[Vec<f64>], rho: &[f64]) -> Result<f64> {
    let Some(first) = points.first() else {
        return Ok(0.0);
    };
    check_dims(first.len(), rho)?;
    Ok(hv_raw(inside(points, rho), rho))
}

/// Hypervolume dominated by `front` and bounded by `rho`.
pub fn hv(front: &FrontSet, rho: &[f64]) -> Result<f64> {
    hv_points(front.points(), rho)
}

/// `HV(front ∪ candidates) − HV(front)`, never negative.
pub fn hvi(candidates: &[Vec<f64>], front: &FrontSet, rho: &[f64]) -> Result<f64> {
    check_dims(rho.len(), rho)?;
    let base = hv(front, rho)?;
    let union: Vec<&Vec<f64>> = front.points().iter().chain(candidates).collect();
    let total = hv_raw(inside(union, rho), rho);
    Ok((total - base).max(0.0))
}

/// Improvement of a single candidate over `set` whose hypervolume is `base`.
/// Exactly zero when the candidate is clipped or weakly dominated.
fn single_hvi(candidate: &[f64], set: &[Vec<f64>], base: f64, rho: &[f64]) -> f64 {
    if candidate.iter().zip(rho).any(|(c, r)| c >= r)
        || set.iter().any(|s| weakly_dominates(s, candidate))
    {
        return 0.0;
    }
    let mut pts = inside(set, rho);
    pts.push(candidate);
    (hv_raw(pts, rho) - base).max(0.0)
}

/// One pick of [`greedy_select`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    /// Index into the candidate list.
    pub index: usize,
    /// Hypervolume improvement at the time of the pick (0 for distance fills).
    pub hvi: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sequential-greedy batch selection by hypervolume improvement.
///
/// Each round picks the candidate with the largest improvement over
/// `current_front` plus everything already picked, ties to the lowest index.
/// Once no remaining candidate improves the hypervolume, the rest of the batch
/// is filled by the candidate farthest (max-min Euclidean distance in
/// objective space) from the picks so far, or from the current front when
/// nothing has been picked yet.
pub fn greedy_select(
    candidates: &[Vec<f64>],
    current_front: &FrontSet,
    rho: &[f64],
    b: usize,
    exec: Execution,
) -> Result<Vec<Pick>> {
    if b > candidates.len() {
        return Err(Error::Argument(format!(
            "batch size {b} exceeds the {} available candidates",
            candidates.len()
        )));
    }
    check_dims(rho.len(), rho)?;
    if let Some(bad) = candidates.iter().find(|c| c.len() != rho.len()) {
        return Err(Error::Argument(format!(
            "candidate has {} objectives, expected {}",
            bad.len(),
            rho.len()
        )));
    }

    let mut set: Vec<Vec<f64>> = current_front.points().to_vec();
    let mut taken = vec![false; candidates.len()];
    let mut picks: Vec<Pick> = Vec::with_capacity(b);

    while picks.len() < b {
        let base = hv_points(&set, rho)?;
        let gains = exec.map_range(candidates.len(), |i| {
            if taken[i] {
                f64::NEG_INFINITY
            } else {
                single_hvi(&candidates[i], &set, base, rho)
            }
        });
        let mut best: Option<(usize, f64)> = None;
        for (i, &g) in gains.iter().enumerate() {
            if !taken[i] && best.is_none_or(|(_, bg)| g > bg) {
                best = Some((i, g));
            }
        }
        let (index, gain) = best.expect("b <= candidates guarantees a free candidate");
        let pick = if gain > 0.0 {
            Pick { index, hvi: gain }
        } else {
            let anchors: Vec<&[f64]> = if picks.is_empty() {
                current_front.points().iter().map(Vec::as_slice).collect()
            } else {
                picks.iter().map(|p| candidates[p.index].as_slice()).collect()
            };
            let spread = exec.map_range(candidates.len(), |i| {
                if taken[i] {
                    f64::NEG_INFINITY
                } else {
                    anchors
                        .iter()
                        .map(|a| sq_dist(a, &candidates[i]))
                        .fold(f64::INFINITY, f64::min)
                }
            });
            let mut far = (usize::MAX, f64::NEG_INFINITY);
            for (i, &d) in spread.iter().enumerate() {
                if !taken[i] && (far.0 == usize::MAX || d > far.1) {
                    far = (i, d);
                }
            }
            Pick {
                index: far.0,
                hvi: 0.0,
            }
        };
        taken[pick.index] = true;
        set.push(candidates[pick.index].clone());
        picks.push(pick);
    }
    Ok(picks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_non_dominated(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for p in points {
            let dominated = points.iter().any(|q| {
                q.iter().zip(p).all(|(a, b)| a <= b) && q.iter().zip(p).any(|(a, b)| a < b)
            });
            if !dominated && !out.contains(p) {
                out.push(p.clone());
            }
        }
        out
    }

    /// Union volume by inclusion–exclusion over all non-empty subsets.
    fn inclusion_exclusion(points: &[Vec<f64>], rho: &[f64]) -> f64 {
        let n = points.len();
        let mut total = 0.0;
        for mask in 1u32..(1 << n) {
            let mut corner = vec![f64::NEG_INFINITY; rho.len()];
            for (i, p) in points.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    for (c, v) in corner.iter_mut().zip(p) {
                        *c = c.max(*v);
                    }
                }
            }
            let vol: f64 = corner.iter().zip(rho).map(|(c, r)| (r - c).max(0.0)).product();
            let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
            total += sign * vol;
        }
        total
    }

    fn front(pts: &[&[f64]]) -> FrontSet {
        FrontSet::from_points(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn filters_dominated_points() {
        let f = front(&[&[1.0, 2.0], &[2.0, 1.0], &[2.0, 2.0]]);
        assert_eq!(f.points(), &[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(front(&[&[1.0, 1.0]]).points(), &[vec![1.0, 1.0]]);
        assert_eq!(front(&[&[1.0, 1.0], &[1.0, 1.0]]).len(), 1);
    }

    #[test]
    fn non_dominated_matches_brute_force_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        assert_eq!(non_dominated(&pts).into_points(), brute_non_dominated(&pts));
    }

    #[test]
    fn non_dominated_matches_brute_force_2d_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..2).map(|_| rng.random_range(0..8) as f64).collect())
            .collect();
        assert_eq!(non_dominated(&pts).into_points(), brute_non_dominated(&pts));
    }

    #[test]
    fn known_volumes() {
        let rho2 = [2.0, 2.0];
        assert!((hv(&front(&[&[0.0, 1.0], &[1.0, 0.0]]), &rho2).unwrap() - 3.0).abs() < 1e-12);
        assert!((hv(&front(&[&[0.5, 0.5]]), &[1.0, 1.0]).unwrap() - 0.25).abs() < 1e-12);
        let f = front(&[&[0.0, 1.0], &[1.0, 0.0], &[0.5, 0.5]]);
        assert!((hv(&f, &[1.1, 1.1]).unwrap() - 0.46).abs() < 1e-12);
        // Three unit-offset boxes in a 2-cube: 3·4 − 3·2 + 1.
        let f3 = front(&[&[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]);
        let pts = f3.points().to_vec();
        assert_eq!(inclusion_exclusion(&pts, &[2.0, 2.0, 2.0]), 7.0);
        assert!((hv(&f3, &[2.0, 2.0, 2.0]).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_and_empty_fronts() {
        assert_eq!(hv(&FrontSet::empty(), &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(hv(&front(&[&[1.0, 0.5]]), &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            hv(&front(&[&[0.1; 4]]), &[1.0; 4]),
            Err(Error::UnsupportedMetric(_))
        ));
    }

    #[test]
    fn hv_3d_matches_inclusion_exclusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.random_range(0.0..1.2)).collect())
                .collect();
            let rho = [1.0, 1.0, 1.0];
            let kept: Vec<Vec<f64>> = pts
                .iter()
                .filter(|p| p.iter().all(|v| *v < 1.0))
                .cloned()
                .collect();
            let exact = hv_points(&pts, &rho).unwrap();
            assert!((exact - inclusion_exclusion(&kept, &rho)).abs() <= 1e-10);
        }
    }

    #[test]
    fn hvi_cases() {
        let current = front(&[&[0.2, 0.2]]);
        assert_eq!(hvi(&[vec![0.5, 0.5]], &current, &[1.0, 1.0]).unwrap(), 0.0);
        let v = hvi(&[vec![0.5, 0.5]], &FrontSet::empty(), &[1.0, 1.0]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let pts: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..2).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let cands: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..2).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let cur = FrontSet::from_points(&pts);
            let mut all = pts.clone();
            all.extend(cands.iter().cloned());
            let want = hv_points(&all, &[1.0, 1.0]).unwrap() - hv(&cur, &[1.0, 1.0]).unwrap();
            let got = hvi(&cands, &cur, &[1.0, 1.0]).unwrap();
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn greedy_worked_example() {
        let cands = vec![vec![0.2, 0.9], vec![0.9, 0.2], vec![0.5, 0.5]];
        let picks = greedy_select(&cands, &FrontSet::empty(), &[1.0, 1.0], 2, Execution::Sequential)
            .unwrap();
        assert_eq!(picks[0].index, 2);
        assert!((picks[0].hvi - 0.25).abs() < 1e-15);
        // Both corners add 0.3·0.1 after the centre pick; lowest index wins.
        assert_eq!(picks[1].index, 0);
        assert!((picks[1].hvi - 0.03).abs() < 1e-12);

        let all = greedy_select(&cands, &FrontSet::empty(), &[1.0, 1.0], 3, Execution::Sequential)
            .unwrap();
        let mut idx: Vec<usize> = all.iter().map(|p| p.index).collect();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2]);

        assert!(matches!(
            greedy_select(&cands, &FrontSet::empty(), &[1.0, 1.0], 4, Execution::Sequential),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn greedy_identical_candidates_fill_with_zero_gain() {
        let cands = vec![vec![0.4, 0.4]; 4];
        let picks = greedy_select(&cands, &FrontSet::empty(), &[1.0, 1.0], 3, Execution::Sequential)
            .unwrap();
        assert!(picks[0].hvi > 0.0);
        assert_eq!(picks[1].hvi, 0.0);
        assert_eq!(picks[2].hvi, 0.0);
        assert_eq!(picks.iter().map(|p| p.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn greedy_parallel_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cands: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let cur = FrontSet::from_points(&cands[..20]);
        let a = greedy_select(&cands, &cur, &[1.1; 3], 5, Execution::Sequential).unwrap();
        let b = greedy_select(&cands, &cur, &[1.1; 3], 5, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pts2() -> impl Strategy<Value = Vec<Vec<f64>>> {
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 0..20)
        }

        proptest! {
            #[test]
            fn hv_is_monotone(pts in pts2(), extra in prop::collection::vec(0.0f64..1.2, 2)) {
                let rho = [1.0, 1.0];
                let before = hv_points(&pts, &rho).unwrap();
                let mut more = pts.clone();
                more.push(extra);
                prop_assert!(hv_points(&more, &rho).unwrap() >= before - 1e-12);
            }

            #[test]
            fn greedy_single_pick_is_global_argmax(
                cands in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 1..50),
                cur in pts2(),
            ) {
                let rho = [1.0, 1.0];
                let front = FrontSet::from_points(&cur);
                let pick = greedy_select(&cands, &front, &rho, 1, Execution::Sequential).unwrap()[0];
                let gains: Vec<f64> = cands
                    .iter()
                    .map(|c| hvi(std::slice::from_ref(c), &front, &rho).unwrap())
                    .collect();
                let best = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if best > 1e-12 {
                    prop_assert!((gains[pick.index] - best).abs() <= 1e-12);
                }
            }
        }
    }
}
