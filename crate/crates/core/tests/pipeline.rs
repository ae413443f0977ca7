mod common;

use std::fs;
use std::path::Path;

use common::{generate, tiny_config};
use vmekit::nnet::Tensor;
use vmekit::pipeline::commands::{cmd_train_separator, cmd_train_vme, load_vme, metrics_csv, separator_dir, CHECKPOINT_FILE};
use vmekit::pipeline::evaluate::{read_csv, write_csv};
use vmekit::pipeline::report::build_report;
use vmekit::pipeline::train::{train_separator, Hooks};
use vmekit::pipeline::{
    cmd_evaluate, cmd_report, load_split, read_manifest, Checkpoint, MaskSource, MetricRow, Split, System, ALPHA_SWEEP,
};
use vmekit::Error;

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn dataset_is_deterministic_and_complete() {
    let cfg = tiny_config(5);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(&cfg, a.path());
    generate(&cfg, b.path());
    let fa = files_under(a.path());
    assert_eq!(fa, files_under(b.path()));
    // Manifest plus four WAVs per sample.
    assert_eq!(fa.len(), 1 + 4 * (4 + 2 + 3));
    let m = read_manifest(&a.path().join("data")).unwrap();
    assert_eq!(m.iter().filter(|e| e.split == Split::Train).count(), 4);
    assert_eq!(m.iter().filter(|e| e.split == Split::Dev).count(), 2);
    assert_eq!(m.iter().filter(|e| e.split == Split::Eval).count(), 3);
    let ev = load_split(&a.path().join("data"), Split::Eval).unwrap();
    for ex in &ev {
        assert_eq!(ex.len(), cfg.len_samples());
        assert_eq!(ex.images.len(), 3);
        let peak = ex.mixture.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - cfg.data.peak_level).abs() < 1e-6, "{peak}");
    }

    let other = tempfile::tempdir().unwrap();
    generate(&tiny_config(6), other.path());
    assert_ne!(fa, files_under(other.path()));
}

fn params(ck: &Checkpoint) -> Vec<Tensor> {
    ck.net.params.tensors.clone()
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let cfg = tiny_config(9);
    let out = tempfile::tempdir().unwrap();
    generate(&cfg, out.path());
    let data = out.path().join("data");
    let train = load_split(&data, Split::Train).unwrap();
    let dev = load_split(&data, Split::Dev).unwrap();

    let straight = train_separator(&cfg, &train, &dev, None, &mut Hooks::default()).unwrap();

    let mut first = Hooks {
        stop_after: Some(1),
        ..Hooks::default()
    };
    let half = train_separator(&cfg, &train, &dev, None, &mut first).unwrap();
    assert_eq!(half.epochs_done, 1);
    let path = out.path().join("half.json");
    half.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(params(&loaded), params(&half));
    let resumed = train_separator(&cfg, &train, &dev, Some(loaded), &mut Hooks::default()).unwrap();

    assert_eq!(resumed.epochs_done, 2);
    assert_eq!(params(&resumed), params(&straight));
    assert_eq!(resumed.optimizer.step, straight.optimizer.step);
    let strip = |ck: &Checkpoint| ck.history.iter().map(|e| (e.epoch, e.train_loss, e.dev_loss)).collect::<Vec<_>>();
    assert_eq!(strip(&resumed), strip(&straight));
}

#[test]
fn commands_run_end_to_end() {
    let cfg = tiny_config(13);
    let out = tempfile::tempdir().unwrap();
    let out = out.path();
    generate(&cfg, out);
    let sep = cmd_train_separator(&cfg, out, false).unwrap();
    assert_eq!(sep.epochs_done, 2);
    let log = fs::read_to_string(separator_dir(out).join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let cks = cmd_train_vme(&cfg, out, &[0.0, 1.0], false).unwrap();
    assert_eq!(cks.len(), 2);
    for ck in &cks {
        let last = ck.history.last().unwrap();
        assert!(last.dev_vm.is_some() && last.dev_bf.is_some());
    }
    assert!(load_vme(out, 1.0).is_ok());
    assert!(matches!(load_vme(out, 0.5), Err(Error::Config(_))));

    // Resuming a finished stage is a no-op.
    let again = cmd_train_separator(&cfg, out, true).unwrap();
    assert_eq!(params(&again), params(&sep));

    let systems = System::parse_list(&["mixture,rm2,rm3,vm".to_string()], &cfg.eval.alphas).unwrap();
    assert_eq!(systems.len(), 5);
    let rows = cmd_evaluate(&cfg, out, &systems).unwrap();
    assert_eq!(rows.len(), 3 * 5);
    assert!(rows.iter().all(|r| r.sdr_bf.is_finite()));
    assert!(rows.iter().filter(|r| r.system == "vm").all(|r| r.sdr_vm.is_some()));
    assert!(rows.iter().filter(|r| r.system != "vm").all(|r| r.sdr_vm.is_none()));
    assert_eq!(read_csv(&metrics_csv(out)).unwrap().len(), rows.len());
    assert!(out.join("eval/summary.md").exists());

    let report = cmd_report(out, &[]).unwrap();
    assert!(report.sdr_bf_svg.starts_with("<svg"));
    assert!(out.join("report/report.md").exists());

    let missing = System::parse_list(&["vm@0.7".to_string()], &[]).unwrap();
    assert!(matches!(cmd_evaluate(&cfg, out, &missing), Err(Error::Config(_))));
}

#[test]
fn oracle_masks_need_no_checkpoints() {
    let mut cfg = tiny_config(21);
    cfg.eval.masks = MaskSource::Oracle;
    let out = tempfile::tempdir().unwrap();
    generate(&cfg, out.path());
    let systems = System::parse_list(&["mixture".into(), "rm2".into(), "rm3".into()], &[]).unwrap();
    let rows = cmd_evaluate(&cfg, out.path(), &systems).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(!out.path().join(CHECKPOINT_FILE).exists());
    let mean = |s: &str| {
        let v: Vec<f64> = rows.iter().filter(|r| r.system == s).map(|r| r.sdr_bf).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean("rm3") > mean("mixture"), "{} vs {}", mean("rm3"), mean("mixture"));
}

fn sweep_rows() -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for s in 0..4 {
        let sample = format!("eval_{s:05}");
        let off = s as f64 * 0.1;
        for (system, v) in [("mixture", -3.0), ("rm2", 1.0), ("rm3", 4.0)] {
            rows.push(MetricRow {
                sample: sample.clone(),
                system: system.into(),
                alpha: None,
                sdr_vm: None,
                sdr_bf: v + off,
            });
        }
        for &a in &ALPHA_SWEEP {
            rows.push(MetricRow {
                sample: sample.clone(),
                system: "vm".into(),
                alpha: Some(a),
                sdr_vm: Some(-10.0 + 20.0 * a + off),
                sdr_bf: 3.0 - 4.0 * (a - 0.3) * (a - 0.3) + off,
            });
        }
    }
    rows
}

#[test]
fn report_is_deterministic_and_finds_best_alpha() {
    let rows = sweep_rows();
    let a = build_report(&rows).unwrap();
    let b = build_report(&rows).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.best_alpha_vm, Some(1.0));
    assert_eq!(a.best_alpha_bf, Some(0.3));
    assert_eq!(a.sdr_vm_svg.matches("<circle").count(), 7);
    assert_eq!(a.sdr_bf_svg.matches("<circle").count(), 7);
    for label in ["RM-BF 3ch", "RM-BF 2ch", "Mixture"] {
        assert!(a.sdr_bf_svg.contains(label), "{label}");
    }
    assert!(a.markdown.contains("| VM-BF | 0.3 |"));

    // Through the CSV text format and back.
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    write_csv(&rows, &p).unwrap();
    let back = read_csv(&p).unwrap();
    assert_eq!(build_report(&back).unwrap(), a);
}

#[test]
fn report_rejects_empty_input() {
    assert!(matches!(build_report(&[]), Err(Error::Data(_))));
}
