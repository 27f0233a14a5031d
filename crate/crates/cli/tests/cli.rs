use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gqst(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gqst"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn gqst")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: Output) -> Output {
    assert_eq!(
        code(&o),
        0,
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn json(text: &[u8]) -> serde_json::Value {
    serde_json::from_slice(text).expect("valid json")
}

#[test]
fn generate_size_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "generate", "--count", "25", "--points", "128", "--seed", "7",
    ];
    ok(gqst(d, &[&args[..], &["--out", "a.gqst"]].concat()));
    ok(gqst(d, &[&args[..], &["--out", "b.gqst"]].concat()));
    let a = fs::read(d.join("a.gqst")).unwrap();
    assert_eq!(a.len(), 96 + 25 * (7 + 2 * 128) * 8);
    assert_eq!(a, fs::read(d.join("b.gqst")).unwrap());
    assert_eq!(&a[..8], b"GQST0001");

    // the sidecar alone reproduces the file
    ok(gqst(
        d,
        &["generate", "--config", "a.gqst.config", "--out", "c.gqst"],
    ));
    assert_eq!(a, fs::read(d.join("c.gqst")).unwrap());
}

#[test]
fn unseeded_runs_print_their_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(gqst(
        dir.path(),
        &[
            "generate", "--count", "2", "--points", "64", "--out", "x.gqst",
        ],
    ));
    let stderr = String::from_utf8_lossy(&o.stderr);
    let seed: u64 = stderr
        .lines()
        .find_map(|l| l.strip_prefix("seed: "))
        .expect("seed echoed")
        .parse()
        .unwrap();
    let sidecar = fs::read_to_string(dir.path().join("x.gqst.config")).unwrap();
    assert!(sidecar.contains(&format!("seed = {seed}\n")));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&gqst(d, &["generate", "--count", "3"])), 2);
    assert_eq!(
        code(&gqst(d, &["generate", "--out", "x", "--bogus", "1"])),
        2
    );
    assert_eq!(code(&gqst(d, &["frobnicate"])), 2);
    assert_eq!(
        code(&gqst(
            d,
            &[
                "generate",
                "--out",
                "x",
                "--eps-min",
                "0.5",
                "--eps-max",
                "0.1"
            ]
        )),
        2
    );
    assert_eq!(code(&gqst(d, &["train", "--out", "m.gqnn"])), 2);
    assert_eq!(code(&gqst(d, &["estimate"])), 2);

    fs::write(d.join("extra.cfg"), "count = 3\nnot-a-flag = 1\n").unwrap();
    assert_eq!(
        code(&gqst(
            d,
            &["generate", "--out", "x", "--config", "extra.cfg"]
        )),
        2
    );
    assert!(!d.join("x").exists());
}

#[test]
fn help_lists_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(gqst(dir.path(), &["train", "--help"]));
    let help = String::from_utf8_lossy(&o.stdout);
    for flag in [
        "--seed",
        "--out",
        "--config",
        "--threads",
        "--data",
        "--states",
        "--epochs",
        "--loss-csv",
    ] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("g.cfg"),
        "# small run\ncount = 4\npoints = 64\nseed = 3\n",
    )
    .unwrap();
    ok(gqst(
        d,
        &["generate", "--config", "g.cfg", "--out", "a.gqst"],
    ));
    assert_eq!(
        fs::metadata(d.join("a.gqst")).unwrap().len(),
        96 + 4 * (7 + 128) * 8
    );
    ok(gqst(
        d,
        &[
            "generate", "--config", "g.cfg", "--count", "6", "--out", "b.gqst",
        ],
    ));
    assert_eq!(
        fs::metadata(d.join("b.gqst")).unwrap().len(),
        96 + 6 * (7 + 128) * 8
    );
    let sidecar = fs::read_to_string(d.join("b.gqst.config")).unwrap();
    assert!(sidecar.contains("count = 6\n") && sidecar.contains("points = 64\n"));
}

#[test]
fn malformed_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("junk.gqst"), b"NOTADATASETATALL").unwrap();
    assert_eq!(
        code(&gqst(
            d,
            &[
                "train",
                "--data",
                "junk.gqst",
                "--out",
                "m.gqnn",
                "--seed",
                "1"
            ]
        )),
        3
    );
    assert_eq!(code(&gqst(d, &["estimate", "--dataset", "junk.gqst"])), 3);
    assert_eq!(
        code(&gqst(d, &["estimate", "--dataset", "missing.gqst"])),
        3
    );

    ok(gqst(
        d,
        &[
            "generate", "--count", "3", "--points", "64", "--seed", "1", "--out", "t.gqst",
        ],
    ));
    let bytes = fs::read(d.join("t.gqst")).unwrap();
    fs::write(d.join("t.gqst"), &bytes[..bytes.len() - 8]).unwrap();
    assert_eq!(
        code(&gqst(
            d,
            &["train", "--data", "t.gqst", "--out", "m.gqnn", "--seed", "1"]
        )),
        3
    );
    assert!(!d.join("m.gqnn").exists());
}

#[test]
fn tiny_training_run_overfits_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["train", "--states", "10", "--epochs", "500", "--seed", "2"];
    ok(gqst(d, &[&args[..], &["--out", "a.gqnn"]].concat()));
    ok(gqst(
        d,
        &[&args[..], &["--out", "b.gqnn", "--threads", "2"]].concat(),
    ));
    let a = fs::read_to_string(d.join("a.loss.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(d.join("b.loss.csv")).unwrap());
    assert_eq!(a.lines().count(), 501);
    let last: f64 = a
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(last < 1e-3, "final loss {last}");

    // the trained model estimates records of its input length
    ok(gqst(
        d,
        &[
            "generate", "--count", "5", "--points", "2048", "--seed", "9", "--out", "e.gqst",
        ],
    ));
    for i in 0..5 {
        let o = ok(gqst(
            d,
            &[
                "estimate",
                "--dataset",
                "e.gqst",
                "--index",
                &i.to_string(),
                "--method",
                "nn",
                "--model",
                "a.gqnn",
            ],
        ));
        let v = json(&o.stdout);
        let (xx, pp, xp) = (
            v["xx"].as_f64().unwrap(),
            v["pp"].as_f64().unwrap(),
            v["xp"].as_f64().unwrap(),
        );
        assert!(xx * pp - xp * xp >= 1.0 - 1e-12);
        assert!(v["purity"].as_f64().unwrap() <= 1.0 + 1e-12);
    }
}

#[test]
fn estimate_nn_without_model_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(gqst(
        d,
        &[
            "generate", "--count", "1", "--points", "256", "--seed", "1", "--out", "e.gqst",
        ],
    ));
    let o = gqst(d, &["estimate", "--dataset", "e.gqst", "--method", "nn"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--model"));
}

#[test]
fn vacuum_estimates_sit_at_zero_db() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(gqst(
        d,
        &[
            "generate",
            "--count",
            "40",
            "--points",
            "2048",
            "--seed",
            "11",
            "--out",
            "v.gqst",
            "--r-db-max",
            "0",
            "--n-max",
            "0",
            "--eps-max",
            "0",
        ],
    ));
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for i in 0..40 {
        let o = ok(gqst(
            d,
            &["estimate", "--dataset", "v.gqst", "--index", &i.to_string()],
        ));
        let sq = json(&o.stdout)["SQ"].as_f64().unwrap();
        sum += sq;
        sum_sq += sq * sq;
    }
    let (mean, rms) = (sum / 40.0, (sum_sq / 40.0).sqrt());
    assert!(mean.abs() <= 0.35 && rms <= 0.35, "mean {mean} rms {rms}");

    // CSV output with JSON mirror
    ok(gqst(
        d,
        &["estimate", "--dataset", "v.gqst", "--out", "est.csv"],
    ));
    let csv = fs::read_to_string(d.join("est.csv")).unwrap();
    assert!(csv.starts_with("method,points,xx,pp,xp,SQ,ASQ,theta0,purity\n"));
    assert_eq!(
        json(&fs::read(d.join("est.json")).unwrap())["method"],
        "direct"
    );
}

#[test]
fn estimate_reads_csv_records() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut text = String::from("x,theta\n");
    for i in 0..4096 {
        // deterministic stand-in: squeezed along x
        let theta = std::f64::consts::PI * (i as f64 + 0.5) / 4096.0;
        let v = 0.1 * theta.cos().powi(2) + 10.0 * theta.sin().powi(2);
        let x = if i % 2 == 0 { 1.0 } else { -1.0 } * (v / 2.0).sqrt();
        text.push_str(&format!("{x},{theta}\n"));
    }
    fs::write(d.join("r.csv"), text).unwrap();
    let v = json(&ok(gqst(d, &["estimate", "--input", "r.csv"])).stdout);
    assert!((v["SQ"].as_f64().unwrap() + 10.0).abs() < 0.1, "{v}");
    assert!((v["ASQ"].as_f64().unwrap() - 10.0).abs() < 0.1, "{v}");
}

#[test]
fn bootstrap_writes_one_row_per_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(gqst(
        d,
        &[
            "bootstrap",
            "--replicates",
            "1000",
            "--points",
            "2048",
            "--record-length",
            "300000",
            "--r-db",
            "6",
            "--n",
            "0.1",
            "--seed",
            "4",
            "--out",
            "b.csv",
        ],
    ));
    let csv = fs::read_to_string(d.join("b.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("replicate,SQ,ASQ,purity"));
    assert_eq!(lines.count(), 1000);
    let j = json(&fs::read(d.join("b.json")).unwrap());
    assert_eq!(j["replicate_count"], 1000);
    assert!(j["mean"]["SQ"].as_f64().unwrap() < -3.0);
}

#[test]
fn select_on_fixture_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("t.csv"),
        "epsilon,mse\n0,0.94\n0.01,0.49\n0.02,1.17\n0.03,6.53\n0.04,4.64\n0.05,3.91\n",
    )
    .unwrap();
    let o = ok(gqst(d, &["select", "--input", "t.csv", "--out", "s.csv"]));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("best epsilon: 0.01"), "{stdout}");
    for row in ["0,0.94", "0.01,0.49", "0.03,6.53", "0.05,3.91"] {
        assert!(stdout.lines().any(|l| l == row), "{row} missing");
    }
    assert!(fs::read_to_string(d.join("s.csv"))
        .unwrap()
        .starts_with("epsilon,mse\n"));
    assert_eq!(
        json(&fs::read(d.join("s.json")).unwrap())["best_epsilon"],
        0.01
    );

    fs::write(d.join("bad.csv"), "epsilon,mse\n0,zero\n").unwrap();
    assert_eq!(code(&gqst(d, &["select", "--input", "bad.csv"])), 3);
}

#[test]
fn curves_and_benchmark_emit_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(gqst(
        d,
        &[
            "curves",
            "--r-db-list",
            "3,9",
            "--samples-per-state",
            "16384",
            "--replicates",
            "5",
            "--seed",
            "2",
            "--out",
            "c.csv",
        ],
    ));
    let csv = fs::read_to_string(d.join("c.csv")).unwrap();
    assert!(
        csv.starts_with("ASQ,SQ,SQ_std,purity,purity_std,ASQ_true,SQ_true\n"),
        "{csv}"
    );
    assert_eq!(csv.lines().count(), 3);
    assert!(d.join("c.json").exists() && d.join("c.csv.config").exists());

    ok(gqst(
        d,
        &[
            "benchmark",
            "--count",
            "40",
            "--points",
            "1024",
            "--seed",
            "3",
            "--out",
            "bm.csv",
        ],
    ));
    let summary = fs::read_to_string(d.join("bm.csv")).unwrap();
    assert!(summary.starts_with("mean_F,var_F"), "{summary}");
    assert_eq!(
        fs::read_to_string(d.join("bm.rows.csv"))
            .unwrap()
            .lines()
            .count(),
        41
    );
    let j = json(&fs::read(d.join("bm.json")).unwrap());
    let f = j["mean_F"].as_f64().unwrap();
    assert!(f > 0.9 && f <= 1.0, "{f}");
}
