use std::path::Path;
use std::process::{Command, Output};

use xsd_core::data::MultiSubjectDataset;
use xsd_core::io::{self, DatasetMeta, EpochedTensor};
use xsd_core::synth::{generate, SynthConfig};

fn xsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xsd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = xsd(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = xsd(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "expected a one-line reason, got {err:?}");
    err
}

fn synth(dir: &Path, extra: &[&str]) -> String {
    let out = dir.to_str().unwrap();
    let mut args = vec!["synth", "--out", out];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn evaluate_csv_header_and_mean_row() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    synth(&data, &["--subjects", "3", "--trials", "36", "--dim", "5", "--tau", "0.3", "--seed", "4"]);
    let csv = tmp.path().join("r.csv");
    let stdout = ok(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "1",
        "--out-csv",
        csv.to_str().unwrap(),
    ]);
    assert!(stdout.contains("lambda_mode = fixed"));
    assert!(stdout.contains("seed = 1"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "subject,single,pool,sg,sg_cs");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("mean,"));
}

#[test]
fn identical_flags_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    synth(&data, &["--subjects", "4", "--trials", "48", "--dim", "6", "--tau", "0.4", "--seed", "8"]);
    let run = |name: &str, threads: Option<&str>| {
        let csv = tmp.path().join(format!("{name}.csv"));
        let txt = tmp.path().join(format!("{name}.txt"));
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_xsd"));
        cmd.args([
            "evaluate",
            "--data",
            data.to_str().unwrap(),
            "--lambda-mode",
            "cv",
            "--seed",
            "5",
            "--out-csv",
            csv.to_str().unwrap(),
            "--out-txt",
            txt.to_str().unwrap(),
        ]);
        if let Some(t) = threads {
            cmd.env("XSD_THREADS", t);
        }
        assert!(cmd.output().unwrap().status.success());
        (std::fs::read(csv).unwrap(), std::fs::read(txt).unwrap())
    };
    let a = run("a", None);
    let b = run("b", None);
    let c = run("c", Some("1"));
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn synth_is_reproducible_on_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--subjects", "2", "--trials", "10", "--dim", "3", "--seed", "11"];
    synth(&tmp.path().join("a"), &args);
    synth(&tmp.path().join("b"), &args);
    for f in ["manifest.txt", "subject_1.f64", "subject_2.labels", "params/params_2.txt"] {
        assert_eq!(
            std::fs::read(tmp.path().join("a").join(f)).unwrap(),
            std::fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

fn with_copied_subject() -> MultiSubjectDataset {
    let (ds, _) = generate(&SynthConfig {
        n_subjects: 1,
        trials_per_subject: 200,
        d: 6,
        mu: 2.0,
        sigma: 1.0,
        gamma: 0.3,
        tau: 0.5,
        seed: 2,
    })
    .unwrap();
    let original = ds.subjects()[0].clone();
    let copy = original.relabel_subject(2);
    MultiSubjectDataset::new(vec![original, copy]).unwrap()
}

#[test]
fn weights_for_a_copied_subject_stay_near_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    io::save_dataset(&with_copied_subject(), &data, &DatasetMeta::default()).unwrap();
    for space in ["original", "second_level"] {
        let out = tmp.path().join(format!("w_{space}.csv"));
        ok(&[
            "weights",
            "--data",
            data.to_str().unwrap(),
            "--target-subject",
            "2",
            "--shift-space",
            space,
            "--out",
            out.to_str().unwrap(),
        ]);
        let text = std::fs::read_to_string(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("trial_index,weight"));
        let w: Vec<f64> = lines
            .map(|l| l.split_once(',').unwrap().1.parse().unwrap())
            .collect();
        assert_eq!(w.len(), 200);
        assert!(w.iter().all(|&v| (0.5..=2.0).contains(&v)), "{space}: {:?}", w);
    }
}

#[test]
fn permcheck_null_mean_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    synth(&data, &["--tau", "0.2", "--seed", "3"]);
    let stdout = ok(&["permcheck", "--data", data.to_str().unwrap(), "--n-perm", "20", "--seed", "7"]);
    let mean: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("null mean = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((mean - 0.5).abs() <= 0.03, "null mean {mean}");
}

#[test]
fn ingest_records_factorization() {
    let tmp = tempfile::tempdir().unwrap();
    let tensors = tmp.path().join("t");
    std::fs::create_dir(&tensors).unwrap();
    for sid in 1..=2u32 {
        let data = (0..4 * 3 * 10).map(|i| (i as f64 * 0.37).sin()).collect();
        let t = EpochedTensor::new(sid, (4, 3, 10), data, vec![0, 1, 0, 1]).unwrap();
        io::write_tensor(&tensors, &format!("s{sid}"), &t).unwrap();
    }
    let out = tmp.path().join("ds");
    ok(&[
        "ingest",
        "--tensor-dir",
        tensors.to_str().unwrap(),
        "--decimate",
        "3",
        "--window",
        "0-500ms",
        "--out",
        out.to_str().unwrap(),
    ]);
    let loaded = io::load_dataset(&out).unwrap();
    assert!(loaded.fingerprint_matches);
    assert_eq!(loaded.dataset.d(), 9);
    assert_eq!(loaded.manifest.meta.factorization, Some((3, 3)));
    assert_eq!(loaded.manifest.meta.window.as_deref(), Some("0-500ms"));
}

#[test]
fn bad_input_exits_nonzero_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    synth(&data, &["--subjects", "2", "--trials", "12", "--dim", "2"]);
    let d = data.to_str().unwrap();
    assert!(fails(&["evaluate", "--data", d, "--methods", "pool,stacking"]).contains("unknown method"));
    assert!(fails(&["evaluate", "--data", d, "--clip", "10,0.1"]).contains("clip"));
    assert!(fails(&["evaluate", "--data", d, "--clip", "0.1"]).contains("lo,hi"));
    assert!(fails(&["evaluate", "--data", "/nonexistent/ds"]).contains("/nonexistent/ds"));
    assert!(fails(&["weights", "--data", d, "--target-subject", "9", "--out", "/dev/null"]).contains("target subject 9"));
    assert!(fails(&["synth", "--trials", "7", "--out", tmp.path().join("odd").to_str().unwrap()]).contains("even"));
    let out = Command::new(env!("CARGO_BIN_EXE_xsd"))
        .args(["permcheck", "--data", d])
        .env("XSD_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
}
