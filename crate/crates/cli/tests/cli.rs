use std::path::Path;
use std::process::{Command, Output};

use vmekit::pipeline::{Config, MaskSource};

fn vmekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmekit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn vmekit")
}

fn write_config(dir: &Path) -> String {
    let mut cfg = Config::desk();
    cfg.data.duration_s = 0.5;
    cfg.data.n_train = 2;
    cfg.data.n_dev = 1;
    cfg.data.n_eval = 2;
    cfg.train.separator.crop_s = 0.25;
    cfg.train.vme.crop_s = 0.25;
    cfg.eval.masks = MaskSource::Oracle;
    cfg.validate().unwrap();
    let p = dir.join("cfg.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn oracle_baselines_run_without_training() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("run");
    let out = out.to_str().unwrap();

    let gen = vmekit(&["gen-data", "--config", &cfg, "--out", out]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    assert!(String::from_utf8_lossy(&gen.stdout).contains("generated 5 samples"));

    let ev = vmekit(&["evaluate", "--config", &cfg, "--out", out, "--systems", "mixture,rm2,rm3"]);
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    let csv = std::fs::read_to_string(Path::new(out).join("eval/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    let rep = vmekit(&["report", "--out", out]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    assert!(Path::new(out).join("report/sdr_bf.svg").exists());
}

#[test]
fn errors_print_category_and_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"not a number\"\n").unwrap();
    let r = vmekit(&["gen-data", "--config", bad.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error[config]"));

    let r = vmekit(&["train-sep", "--out", tmp.path().join("empty").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error["));
}

#[test]
fn unknown_system_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let r = vmekit(&["evaluate", "--out", tmp.path().to_str().unwrap(), "--systems", "rm4"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error[config]"));
}
