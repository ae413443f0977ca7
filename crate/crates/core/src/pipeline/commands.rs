//! The five pipeline commands over a run directory:
//!
//! ```text
//! <out>/data/manifest.jsonl, <split>/<id>_<role>.wav
//! <out>/separator/checkpoint.json, log.jsonl
//! <out>/vme/alpha_<α>/checkpoint.json, log.jsonl
//! <out>/eval/metrics.csv, summary.md
//! <out>/report/sdr_vm.svg, sdr_bf.svg, report.md
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;

use super::checkpoint::{Checkpoint, Stage};
use super::config::Config;
use super::dataset::{dataset_dir, generate_dataset, load_split, ManifestEntry, Split};
use super::evaluate::{alpha_tag, evaluate, read_csv, summarize, summary_markdown, write_csv, MetricRow, System};
use super::report::{build_report, Report};
use super::train::{train_separator, train_vme, Hooks, VmeData};
use crate::error::{Error, Result};
use crate::nnet::{Separator, VmeModel};

pub fn separator_dir(out: &Path) -> PathBuf {
    out.join("separator")
}

pub fn vme_dir(out: &Path, alpha: f64) -> PathBuf {
    out.join("vme").join(alpha_tag(alpha))
}

pub fn metrics_csv(out: &Path) -> PathBuf {
    out.join("eval").join("metrics.csv")
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "log.jsonl";

pub fn cmd_gen_data(cfg: &Config, out: &Path) -> Result<Vec<ManifestEntry>> {
    let dir = dataset_dir(out);
    let entries = generate_dataset(cfg, &dir)?;
    info!("wrote {} samples to {}", entries.len(), dir.display());
    Ok(entries)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads `dir/checkpoint.json` when resuming and it exists.
fn resume_from(dir: &Path, stage: Stage, cfg: &Config, resume: bool) -> Result<Option<Checkpoint>> {
    let path = dir.join(CHECKPOINT_FILE);
    if !resume || !path.exists() {
        return Ok(None);
    }
    let ck = Checkpoint::load(&path)?.expect_stage(stage, &path)?;
    if ck.seed != cfg.seed {
        return Err(Error::Config(format!(
            "{}: checkpoint seed {} differs from the configured {}",
            path.display(),
            ck.seed,
            cfg.seed
        )));
    }
    Ok(Some(ck))
}

/// Saves the checkpoint and appends its newest epoch to the log.
fn epoch_writer(dir: PathBuf, fresh: bool) -> Result<impl FnMut(&Checkpoint) -> Result<()>> {
    create_dir(&dir)?;
    let log = dir.join(LOG_FILE);
    if fresh {
        fs::write(&log, b"").map_err(|e| Error::io(&log, e))?;
    }
    Ok(move |ck: &Checkpoint| {
        ck.save(&dir.join(CHECKPOINT_FILE))?;
        let entry = ck.history.last().expect("epoch logged");
        let mut f = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&log)
            .map_err(|e| Error::io(&log, e))?;
        writeln!(f, "{}", serde_json::to_string(entry)?).map_err(|e| Error::io(&log, e))
    })
}

pub fn cmd_train_separator(cfg: &Config, out: &Path, resume: bool) -> Result<Checkpoint> {
    let data = dataset_dir(out);
    let train = load_split(&data, Split::Train)?;
    let dev = load_split(&data, Split::Dev)?;
    let dir = separator_dir(out);
    let prev = resume_from(&dir, Stage::Separator, cfg, resume)?;
    let mut on_epoch = epoch_writer(dir, prev.is_none())?;
    let mut hooks = Hooks {
        on_epoch: Some(&mut on_epoch),
        ..Hooks::default()
    };
    train_separator(cfg, &train, &dev, prev, &mut hooks)
}

pub fn load_separator(out: &Path) -> Result<Separator> {
    let path = separator_dir(out).join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(Error::Config(format!("separator checkpoint {} not found", path.display())));
    }
    Separator::from_net(Checkpoint::load(&path)?.expect_stage(Stage::Separator, &path)?.net)
}

pub fn load_vme(out: &Path, alpha: f64) -> Result<VmeModel> {
    let path = vme_dir(out, alpha).join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "system vm@{alpha}: NN-VME checkpoint {} not found",
            path.display()
        )));
    }
    let ck = Checkpoint::load(&path)?.expect_stage(Stage::Vme, &path)?;
    if ck.alpha != Some(alpha) {
        return Err(Error::Data(format!("{}: trained with α = {:?}", path.display(), ck.alpha)));
    }
    VmeModel::from_net(ck.net)
}

/// Trains one NN-VME per α, sharing the frozen separator outputs.
pub fn cmd_train_vme(cfg: &Config, out: &Path, alphas: &[f64], resume: bool) -> Result<Vec<Checkpoint>> {
    for &a in alphas {
        cfg.mtl(a)?;
    }
    let separator = load_separator(out)?;
    let data_dir = dataset_dir(out);
    let train = load_split(&data_dir, Split::Train)?;
    let dev = load_split(&data_dir, Split::Dev)?;
    let data = VmeData::new(cfg, &separator, &train, &dev)?;
    alphas
        .iter()
        .map(|&alpha| {
            let dir = vme_dir(out, alpha);
            let prev = resume_from(&dir, Stage::Vme, cfg, resume)?;
            let mut on_epoch = epoch_writer(dir, prev.is_none())?;
            let mut hooks = Hooks {
                on_epoch: Some(&mut on_epoch),
                ..Hooks::default()
            };
            train_vme(cfg, alpha, &data, prev, &mut hooks)
        })
        .collect()
}

/// Evaluates `systems` on the eval split and writes the CSV and summary.
pub fn cmd_evaluate(cfg: &Config, out: &Path, systems: &[System]) -> Result<Vec<MetricRow>> {
    let examples = load_split(&dataset_dir(out), Split::Eval)?;
    let needs_sep = cfg.eval.masks == super::config::MaskSource::Separator
        && systems.iter().any(|s| *s != System::Mixture);
    let separator = if needs_sep { Some(load_separator(out)?) } else { None };
    let vmes = systems
        .iter()
        .filter_map(System::alpha)
        .map(|a| Ok((a, load_vme(out, a)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows = evaluate(cfg, &examples, systems, separator.as_ref(), &vmes)?;
    let csv = metrics_csv(out);
    write_csv(&rows, &csv)?;
    let md = summary_markdown(&summarize(&rows));
    let path = csv.with_file_name("summary.md");
    fs::write(&path, md).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Plots and summary from one or more metric CSVs into `<out>/report`.
pub fn cmd_report(out: &Path, csvs: &[PathBuf]) -> Result<Report> {
    let default = [metrics_csv(out)];
    let csvs = if csvs.is_empty() { &default[..] } else { csvs };
    let mut rows = Vec::new();
    for p in csvs {
        let r = read_csv(p)?;
        if r.is_empty() {
            return Err(Error::Data(format!("{}: no metric rows", p.display())));
        }
        rows.extend(r);
    }
    let report = build_report(&rows)?;
    let dir = out.join("report");
    create_dir(&dir)?;
    for (name, body) in [
        ("sdr_vm.svg", &report.sdr_vm_svg),
        ("sdr_bf.svg", &report.sdr_bf_svg),
        ("report.md", &report.markdown),
    ] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}
