use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scnseg::volume::{read_labels, read_volume};

fn scnseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scnseg")).args(args).output().expect("spawn scnseg")
}

fn ok(args: &[&str]) -> String {
    let out = scnseg(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small networks so training and inference stay fast in debug builds.
const TINY: &[&str] = &[
    "--set", "arch.loc.levels=2", "--set", "arch.loc.filters=2",
    "--set", "arch.seg.local_levels=2", "--set", "arch.seg.local_filters=2",
    "--set", "arch.seg.spatial_levels=2", "--set", "arch.seg.spatial_filters=2",
    "--set", "phantom.size=16",
];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_owned(args: &[String]) -> Output {
    let a: Vec<&str> = args.iter().map(String::as_str).collect();
    scnseg(&a)
}

#[test]
fn phantom_gen_is_deterministic_and_labelled() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        let out = run_owned(&with(&["phantom-gen", "--count", "2", "--seed", "1", "--out-dir", p(d)], TINY));
        assert!(out.status.success());
    }
    for f in ["image_000.mha", "label_000.mha", "image_001.mha", "label_001.mha", "manifest.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let lab = read_labels(a.join("label_000.mha")).unwrap();
    let mut seen: Vec<u8> = lab.data().to_vec();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen, vec![0, 1, 2, 3, 4]);
}

#[test]
fn phantom_gen_zero_count_writes_empty_manifest() {
    let t = tempfile::tempdir().unwrap();
    ok(&["phantom-gen", "--count", "0", "--out-dir", p(t.path())]);
    assert_eq!(fs::read_to_string(t.path().join("manifest.tsv")).unwrap(), "");
}

#[test]
fn train_infer_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    assert!(run_owned(&with(&["phantom-gen", "--count", "1", "--seed", "3", "--out-dir", p(&data)], TINY)).status.success());

    let mut ckpts = Vec::new();
    for (obj, run) in [("loc", "loc"), ("seg", "seg"), ("seg", "seg2")] {
        let out = t.path().join(run);
        let r = run_owned(&with(
            &["train", "--objective", obj, "--data", p(&data), "--out", p(&out), "--set", "train.iterations=10"],
            TINY,
        ));
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let log = fs::read_to_string(out.join("loss.log")).unwrap();
        assert_eq!(log.lines().count(), 10);
        ckpts.push(out.join("checkpoint.scnw"));
    }
    assert_eq!(fs::read(&ckpts[1]).unwrap(), fs::read(&ckpts[2]).unwrap(), "same seed, same checkpoint");

    let image = data.join("image_000.mha");
    let before = fs::read(&image).unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let (o, s) = (t.path().join(format!("pred{k}.mha")), t.path().join(format!("stats{k}.tsv")));
        let r = run_owned(&with(
            &["infer", "--image", p(&image), "--loc-model", p(&ckpts[0]), "--seg-model", p(&ckpts[1]), "--out", p(&o), "--stats", p(&s)],
            TINY,
        ));
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        outputs.push((o, s));
    }
    assert_eq!(fs::read(&image).unwrap(), before, "input untouched");
    assert_eq!(fs::read(&outputs[0].0).unwrap(), fs::read(&outputs[1].0).unwrap());

    let (vin, vout) = (read_volume(&image).unwrap(), read_labels(&outputs[0].0).unwrap());
    assert_eq!(vin.grid(), vout.grid());

    let stats = fs::read_to_string(&outputs[0].1).unwrap();
    let get = |k: &str| -> u64 {
        stats.lines().find_map(|l| l.strip_prefix(&format!("{k}\t"))).unwrap().parse().unwrap()
    };
    assert_eq!(get("flops"), get("localize_flops") + get("segment_flops"));
    assert!(get("peak_arena_bytes") > 0);
}

#[test]
fn train_rejects_missing_data() {
    let t = tempfile::tempdir().unwrap();
    let out = scnseg(&["train", "--objective", "seg", "--data", p(&t.path().join("nope")), "--out", p(t.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));
}

#[test]
fn train_reports_non_finite_loss() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    assert!(run_owned(&with(&["phantom-gen", "--count", "1", "--out-dir", p(&data)], TINY)).status.success());
    let r = run_owned(&with(
        &["train", "--objective", "seg", "--data", p(&data), "--out", p(&t.path().join("o")),
          "--set", "train.iterations=3", "--set", "train.learning_rate=1e30"],
        TINY,
    ));
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("finite"), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn eval_self_is_perfect_and_names_missing_cases() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    assert!(run_owned(&with(&["phantom-gen", "--count", "2", "--out-dir", p(&data)], TINY)).status.success());
    let rep = t.path().join("rep");
    let text = ok(&["eval", "--pred-dir", p(&data), "--gt-dir", p(&data), "--out", p(&rep)]);
    assert!(text.contains("100.00"));
    let tsv = fs::read_to_string(rep.join("report.tsv")).unwrap();
    for row in tsv.lines().skip(1) {
        for v in row.split('\t').skip(1) {
            assert_eq!(v.parse::<f64>().unwrap_or(100.0).max(0.0), if row.starts_with("std") { 0.0 } else { 100.0 }, "{row}");
        }
    }

    let preds = t.path().join("preds");
    fs::create_dir_all(&preds).unwrap();
    fs::copy(data.join("label_000.mha"), preds.join("label_000.mha")).unwrap();
    let out = scnseg(&["eval", "--pred-dir", p(&preds), "--gt-dir", p(&data)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("label_001.mha") && !err.contains("label_000.mha"), "{err}");
}

#[test]
fn inspect_compares_with_published_figures() {
    let out = ok(&["inspect", "--arch", "seg", "--dims", "32x32x32", "--compare-paper"]);
    assert!(out.contains("8797627020"), "{out}");
    assert!(out.contains("1270090"));
    assert!(out.contains("ratio"));
    let out = ok(&["inspect", "--arch", "loc", "--dims", "32x32x32", "--compare-paper"]);
    assert!(out.contains("parameters\t637474"), "{out}");
}

#[test]
fn inspect_flops_scale_with_volume() {
    let flops = |d: &str| -> u64 {
        let out = ok(&["inspect", "--arch", "loc", "--dims", d]);
        out.lines().find_map(|l| l.strip_prefix("flops\t")).unwrap().parse().unwrap()
    };
    assert_eq!(flops("64x64x64"), 8 * flops("32x32x32"));
}

#[test]
fn inspect_rejects_indivisible_dims() {
    let out = scnseg(&["inspect", "--arch", "loc", "--dims", "33x32x32"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divisible"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(scnseg(&["inspect", "--arch", "loc", "--dims", "32x32"]).status.code(), Some(2));
    assert_eq!(scnseg(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(scnseg(&["inspect", "--arch", "loc", "--dims", "32x32x32", "--set", "no.such.key=1"]).status.code(), Some(1));
}
