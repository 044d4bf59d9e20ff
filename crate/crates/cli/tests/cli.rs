use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ovseg3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovseg3d"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_spec(dir: &Path) -> String {
    let path = dir.join("synthspec.json");
    fs::write(
        &path,
        r#"{"seed": 3, "n_points": 1500, "classes": ["road", "car", "pedestrian"], "cars": 2, "pedestrians": 2}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pipeline_writes_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = small_spec(tmp.path());
    let out = tmp.path().join("run1");
    let o = ovseg3d(&["pipeline", "--spec", &spec, "--steps", "40", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["miou"].is_f64());
    let stages: Vec<&str> = metrics["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["stage"].as_str().unwrap())
        .collect();
    assert_eq!(stages, ["pseudo", "predict", "afi"]);
    for f in ["pseudo.u16", "predict.u16", "afi.u16", "head.json", "trace.csv", "afi.svg", "gt.svg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn gamma_out_of_range_is_a_usage_error() {
    let o = ovseg3d(&["afi", "--gamma", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma must be in (0,1)"));
}

#[test]
fn help_and_missing_flags() {
    assert_eq!(ovseg3d(&["--help"]).status.code(), Some(0));
    assert_eq!(ovseg3d(&["eval"]).status.code(), Some(1));
    assert_eq!(ovseg3d(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ovseg3d(&["pseudo", "--scene", p(&tmp.path().join("nope")), "--teacher", "x", "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn stages_chain_and_eval_of_truth_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = small_spec(tmp.path());
    let d = tmp.path().join("data");
    assert!(ovseg3d(&["synth", "--spec", &spec, "--out", p(&d)]).status.success());
    let scene = d.join("scene");
    let teacher = d.join("teacher");
    let dict = d.join("classdict.json");
    let gt = scene.join("gt_labels.u16");

    let o = ovseg3d(&["eval", "--gt", p(&gt), "--pred", p(&gt), "--dict", p(&dict), "--out", p(&d)]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["miou"].as_f64(), Some(100.0));

    let run = |args: &[&str]| {
        let o = ovseg3d(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["project", "--scene", p(&scene), "--out", p(&d)]);
    run(&["pseudo", "--scene", p(&scene), "--teacher", p(&teacher), "--out", p(&d)]);
    run(&["corr", "--scene", p(&scene), "--teacher", p(&teacher), "--out", p(&d)]);
    run(&["tmp", "--scene", p(&scene), "--teacher", p(&teacher), "--dict", p(&dict), "--steps", "20", "--out", p(&d)]);
    let pseudo = d.join("pseudo.u16");
    run(&[
        "afi", "--scene", p(&scene), "--dict", p(&dict), "--labels", p(&d.join("predict.u16")),
        "--pseudo", p(&pseudo), "--out", p(&d),
    ]);
    run(&["render", "--scene", p(&scene), "--dict", p(&dict), "--labels", p(&pseudo), p(&d.join("afi.u16")), "--out", p(&d)]);
    assert!(fs::read_to_string(d.join("hits.csv")).unwrap().starts_with("point,camera,u,v,depth\n"));
    assert!(fs::read_to_string(d.join("corr.json")).unwrap().contains("\"pairs\""));
    assert!(fs::read_to_string(d.join("afi.svg")).unwrap().starts_with("<svg"));
    assert!(d.join("pseudo.svg").exists());

    // without --pseudo the coverage step cannot run
    let o = ovseg3d(&["afi", "--scene", p(&scene), "--dict", p(&dict), "--labels", p(&pseudo), "--out", p(&d)]);
    assert_eq!(o.status.code(), Some(2));
    run(&["afi", "--scene", p(&scene), "--dict", p(&dict), "--labels", p(&pseudo), "--no-coverage", "--out", p(&d)]);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = small_spec(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = ovseg3d(&["pipeline", "--spec", &spec, "--steps", "20", "--no-superpoints", "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut files = Vec::new();
    collect(&a, &mut files);
    assert!(files.len() > 10);
    for f in files {
        let rel = f.strip_prefix(&a).unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.join(rel)).unwrap(), "{}", rel.display());
    }
}

fn collect(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            collect(&path, out);
        } else {
            out.push(path);
        }
    }
}
