//! Drives the installed binary through the full pipeline in a scratch
//! directory: prepare -> train -> attack -> consistency -> certify-lp ->
//! certify-smooth -> importance -> replay. Asserts on exit codes, output
//! schemas, and the determinism contract.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nuadv")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Small two-class CSV with an id column to drop, written fresh per test.
fn write_raw_csv(dir: &Path) {
    use std::fmt::Write as _;
    let mut s = String::from("id,f_a,f_b,f_c,y\n");
    // Deterministic pseudo-data: two shifted clusters plus a little
    // feature coupling so covariances are nontrivial.
    let mut state = 9u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
    };
    for i in 0..48 {
        let y = usize::from(i % 3 == 0);
        let shift = if y == 1 { 1.4 } else { -0.9 };
        let a = shift + next();
        let b = -shift + 0.5 * next() + 0.3 * a;
        let c = 0.2 * next() + shift * 0.5;
        writeln!(s, "r{i},{a},{b},{c},{y}").unwrap();
    }
    std::fs::write(dir.join("raw.csv"), s).unwrap();
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_raw_csv(d);

    let out = ok(
        d,
        &[
            "prepare", "--data", "raw.csv", "--label", "y", "--drop", "id", "--test-fraction",
            "0.25", "--seed", "5", "--out-train", "tr.csv", "--out-test", "te.csv",
            "--out-stats", "stats.json",
        ],
    );
    assert!(out.contains("prepared: train=36 test=12 features=3"), "{out}");
    let tr = read(d, "tr.csv");
    assert!(tr.starts_with("f_a,f_b,f_c,y\n"), "standardized header: {tr}");

    let out = ok(
        d,
        &[
            "train", "--data", "tr.csv", "--label", "y", "--omega", "md-target", "--epsilon",
            "0.6", "--epochs", "40", "--hidden", "6", "--seed", "3", "--out", "model.json",
            "--out-omega", "omega.json",
        ],
    );
    assert!(out.contains("trained:"), "{out}");

    let out = ok(
        d,
        &[
            "attack", "--model", "model.json", "--data", "te.csv", "--label", "y", "--omega",
            "import:omega.json", "--epsilon", "0.6", "--out", "attack.csv",
        ],
    );
    assert!(out.contains("attacked: n=12"), "{out}");
    let attack = read(d, "attack.csv");
    let header = attack.lines().next().unwrap();
    assert_eq!(
        header,
        "index,true_label,clean_prediction,adversarial_prediction,delta_l2,omega_delta_l2,\
         attack_loss,delta_0,delta_1,delta_2"
    );
    assert_eq!(attack.lines().count(), 13);

    // Every recorded weighted norm respects the budget.
    for line in attack.lines().skip(1) {
        let omega_l2: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        assert!(omega_l2 <= 0.6 * (1.0 + 1e-9), "budget violated: {line}");
    }

    let out = ok(
        d,
        &[
            "consistency", "--deltas", "attack.csv", "--omega", "import:omega.json",
            "--epsilon", "0.6", "--out", "hist.csv",
        ],
    );
    assert!(out.contains("within_bound=1.0000"), "projected deltas pass their own bound: {out}");
    let hist = read(d, "hist.csv");
    assert!(hist.starts_with("bin_low,bin_high,count\n"));
    assert_eq!(hist.lines().count(), 51, "50 bins plus header");
    let total: usize =
        hist.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 12, "histogram counts every perturbation");

    let out = ok(
        d,
        &[
            "certify-lp", "--model", "model.json", "--data", "te.csv", "--label", "y",
            "--omega", "import:omega.json", "--epsilon", "0.2", "--out", "cert.csv",
        ],
    );
    assert!(out.contains("certified:"), "{out}");
    let cert = read(d, "cert.csv");
    assert!(cert.starts_with("index,true_label,clean_prediction,certified,margin\n"));
    // Certification and prediction agree: a certified sample is one whose
    // clean prediction provably cannot move, so it must match the label.
    for line in cert.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[3] == "true" {
            assert_eq!(cells[1], cells[2], "certified sample misclassified: {line}");
            let margin: f64 = cells[4].parse().unwrap();
            assert!(margin > 0.0, "certified with nonpositive margin: {line}");
        }
    }

    let out = ok(
        d,
        &[
            "certify-smooth", "--model", "model.json", "--data", "te.csv", "--label", "y",
            "--omega", "import:omega.json", "--sigma", "0.5", "--n0", "50", "--n", "400",
            "--alpha", "0.01", "--seed", "11", "--out", "smooth.csv",
        ],
    );
    assert!(out.contains("smoothed: n=12"), "{out}");
    let smooth = read(d, "smooth.csv");
    assert!(smooth.starts_with("index,true_label,prediction,votes,p_a_lower,certified_md_radius\n"));
    for line in smooth.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let radius: f64 = cells[5].parse().unwrap();
        assert!(radius >= 0.0);
        if cells[2] != "abstain" {
            let p: f64 = cells[4].parse().unwrap();
            assert!(p > 0.5, "non-abstaining row needs a majority bound: {line}");
        }
    }

    let out = ok(d, &["importance", "--data", "tr.csv", "--label", "y", "--out", "imp.csv"]);
    assert!(out.contains("importance: method=pearson"), "{out}");
    let imp = read(d, "imp.csv");
    assert!(imp.starts_with("feature_name,importance\n"));
    assert_eq!(imp.lines().count(), 4);

    // Shapley importance runs against the trained model too.
    ok(
        d,
        &[
            "importance", "--data", "tr.csv", "--label", "y", "--method", "shapley:50",
            "--model", "model.json", "--seed", "2", "--out", "imp_shap.csv",
        ],
    );

    // Replay every stage and confirm bit-identical outputs.
    for manifest in [
        "tr.csv.manifest.json",
        "model.json.manifest.json",
        "attack.csv.manifest.json",
        "hist.csv.manifest.json",
        "cert.csv.manifest.json",
        "smooth.csv.manifest.json",
        "imp.csv.manifest.json",
    ] {
        let out = ok(d, &["replay", manifest]);
        assert!(out.contains("replay ok"), "{manifest}: {out}");
    }
}

#[test]
fn identical_flags_produce_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_raw_csv(d);
    ok(
        d,
        &[
            "prepare", "--data", "raw.csv", "--label", "y", "--drop", "id", "--out-train",
            "tr.csv", "--out-test", "te.csv",
        ],
    );
    let args = [
        "train", "--data", "tr.csv", "--label", "y", "--omega", "pearson", "--epsilon", "0.4",
        "--epochs", "25", "--hidden", "5", "--seed", "8", "--out", "m.json",
    ];
    ok(d, &args);
    let first = read(d, "m.json");
    ok(d, &args);
    assert_eq!(first, read(d, "m.json"), "same flags, same bytes");
}

#[test]
fn config_file_fills_unset_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_raw_csv(d);
    ok(
        d,
        &[
            "prepare", "--data", "raw.csv", "--label", "y", "--drop", "id", "--out-train",
            "tr.csv", "--out-test", "te.csv",
        ],
    );
    std::fs::write(
        d.join("run.conf"),
        "label = y\nepochs = 30\nhidden = 5\nseed = 4\nepsilon = 0.5\n",
    )
    .unwrap();
    // --epochs on the command line overrides the config's 30.
    ok(
        d,
        &[
            "train", "--data", "tr.csv", "--config", "run.conf", "--epochs", "10", "--out",
            "m.json",
        ],
    );
    let manifest = read(d, "m.json.manifest.json");
    let parsed: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(parsed["args"]["epochs"], "10");
    assert_eq!(parsed["args"]["seed"], "4");
    assert_eq!(parsed["args"]["epsilon"], "0.5");
}

#[test]
fn replay_detects_tampered_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_raw_csv(d);
    ok(
        d,
        &[
            "prepare", "--data", "raw.csv", "--label", "y", "--drop", "id", "--out-train",
            "tr.csv", "--out-test", "te.csv",
        ],
    );
    ok(
        d,
        &[
            "train", "--data", "tr.csv", "--label", "y", "--epochs", "5", "--hidden", "4",
            "--out", "m.json",
        ],
    );
    // Tampering with an input is reported as a replay mismatch with exit 2.
    let mut raw = read(d, "tr.csv");
    raw.push_str("0.1,0.2,0.3,1\n");
    std::fs::write(d.join("tr.csv"), raw).unwrap();
    let out = run_in(d, &["replay", "m.json.manifest.json"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replay mismatch"));
}

#[test]
fn usage_and_data_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // No arguments: usage error, exit 1, usage text on stderr.
    let out = run_in(d, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    // Unknown flag: usage error.
    let out = run_in(d, &["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));

    // Missing input file: data error, exit 2, single-line diagnostic.
    let out = run_in(
        d,
        &["train", "--data", "absent.csv", "--label", "y", "--out", "m.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim().lines().count(), 1, "single diagnostic line: {err}");

    // Numeric failure: nonpositive sigma is a domain error, exit 3.
    write_raw_csv(d);
    ok(
        d,
        &[
            "prepare", "--data", "raw.csv", "--label", "y", "--drop", "id", "--out-train",
            "tr.csv", "--out-test", "te.csv",
        ],
    );
    ok(
        d,
        &[
            "train", "--data", "tr.csv", "--label", "y", "--epochs", "5", "--hidden", "4",
            "--out", "m.json",
        ],
    );
    let out = run_in(
        d,
        &[
            "certify-smooth", "--model", "m.json", "--data", "te.csv", "--label", "y",
            "--sigma=-1", "--out", "s.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // --help exits 0.
    let out = run_in(d, &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}
