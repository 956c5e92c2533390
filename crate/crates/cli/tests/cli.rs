use std::path::Path;
use std::process::{Command, Output};

fn tiny<'a>(iters: &'a str, seeds: &'a str) -> Vec<&'a str> {
    vec![
        "--n-var", "3", "--n-init", "6", "--iters", iters, "--batch", "2", "--particles", "3", "--candidates", "20",
        "--inner-steps", "5", "--hidden", "8", "--seeds", seeds,
    ]
}

fn svh(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svh-psl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SVH_PSL_OUT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["--problem", "zdt1", "--no-such-flag"],
        &[],
        &["--problem", "zdt1", "--problem-spec", "p.toml"],
        &["--problem", "nope"],
        &["--problem", "zdt1", "--batch", "30", "--candidates", "20"],
        &["--problem", "zdt1", "--seeds", "0"],
        &["--problem", "zdt1", "--ref-point", "1,2,3"],
        &["--problem", "zdt1", "--kernel", "cubic"],
        &["--problem", "zdt1", "--emit-front", "0"],
    ];
    for args in cases {
        let o = svh(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(std::fs::read_dir(dir.path()).map(|d| d.count()).unwrap_or(0), 0);
}

#[test]
fn tiny_run_writes_logs_checkpoints_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["--problem", "zdt1", "--seed", "4", "--kernel", "global", "--alpha", "1"];
    args.extend(tiny("1", "2"));
    let o = svh(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("seed 4: 8 evaluations"), "{stdout}");
    assert!(stdout.contains("seed 5: 8 evaluations"), "{stdout}");

    for name in [
        "zdt1_global_alpha1_seed4.jsonl",
        "zdt1_global_alpha1_seed5.jsonl",
        "zdt1_global_alpha1_seed4.ckpt",
        "zdt1_global_alpha1_aggregate.json",
        "zdt1_global_alpha1_aggregate.csv",
    ] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let agg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("zdt1_global_alpha1_aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg["seeds"], serde_json::json!([4, 5]));
    assert_eq!(agg["kernel"], "global");
    assert_eq!(agg["rows"].as_array().unwrap().len(), 2);

    let log = std::fs::read_to_string(dir.path().join("zdt1_global_alpha1_seed4.jsonl")).unwrap();
    let kinds: Vec<String> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds, ["header", "iteration", "iteration", "summary"]);
}

#[test]
fn zero_iterations_and_front_emission() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["--problem", "vlmop2", "--emit-front", "5"];
    args.extend(tiny("0", "1"));
    let o = svh(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let front = std::fs::read_to_string(dir.path().join("vlmop2_local_alpha0.1_seed0_front.txt")).unwrap();
    let model_rows = front.lines().filter(|l| l.starts_with("model ")).count();
    let archive_rows = front.lines().filter(|l| l.starts_with("archive ")).count();
    assert_eq!(model_rows, 5);
    assert!(archive_rows >= 1);
    let log = std::fs::read_to_string(dir.path().join("vlmop2_local_alpha0.1_seed0.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn sequential_flag_gives_identical_logs() {
    let run = |extra: &[&str]| {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["--problem", "zdt2"];
        args.extend(tiny("1", "1"));
        args.extend_from_slice(extra);
        assert!(svh(&args, dir.path()).status.success());
        let text = std::fs::read_to_string(dir.path().join("zdt2_local_alpha0.1_seed0.jsonl")).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("seconds");
        v
    };
    assert_eq!(run(&[]), run(&["--sequential"]));
}
