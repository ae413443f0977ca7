//! System comparison on the eval split: per-sample metric CSV and an
//! aggregate table with columns alpha, SDR_VM and SDR_BF.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Config, MaskSource};
use super::dataset::Example;
use super::train::separator_masks;
use crate::beamformer::{beamform, AugmentedArray, TfMask};
use crate::error::{Error, Result};
use crate::metrics::{sdr_bf, sdr_vm};
use crate::nnet::{Separator, VmeModel};
use crate::room::RM_CHANNELS;
use crate::signal::{MultichannelWave, StftKernel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum System {
    /// The ch4 mixture as every source estimate.
    Mixture,
    /// Beamformer on the two real microphones.
    Rm2,
    /// Beamformer on all three real microphones.
    Rm3,
    /// Beamformer on two real microphones and the NN-VME output.
    Vm(f64),
}

impl System {
    pub fn name(&self) -> &'static str {
        match self {
            System::Mixture => "mixture",
            System::Rm2 => "rm2",
            System::Rm3 => "rm3",
            System::Vm(_) => "vm",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            System::Vm(a) => Some(*a),
            _ => None,
        }
    }

    /// Parses `mixture,rm2,rm3,vm,vm@0.3`; a bare `vm` expands to `alphas`.
    pub fn parse_list(list: &[String], alphas: &[f64]) -> Result<Vec<System>> {
        let mut out: Vec<System> = Vec::new();
        for tok in list.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
            let parsed: Vec<System> = if tok == "vm" {
                alphas.iter().map(|&a| System::Vm(a)).collect()
            } else {
                vec![tok.parse()?]
            };
            for s in parsed {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no systems to evaluate".into()));
        }
        Ok(out)
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixture" => Ok(System::Mixture),
            "rm2" => Ok(System::Rm2),
            "rm3" => Ok(System::Rm3),
            _ => {
                let a = s
                    .strip_prefix("vm@")
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown system `{s}`")))?;
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::Config(format!("system `{s}`: alpha outside [0, 1]")));
                }
                Ok(System::Vm(a))
            }
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            System::Vm(a) => write!(f, "vm@{a}"),
            s => f.write_str(s.name()),
        }
    }
}

/// Directory name of the NN-VME trained with `alpha`.
pub fn alpha_tag(alpha: f64) -> String {
    format!("alpha_{alpha:.2}")
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample: String,
    pub system: String,
    pub alpha: Option<f64>,
    pub sdr_vm: Option<f64>,
    pub sdr_bf: f64,
}

fn masks_for(ex: &Example, cfg: &Config, separator: Option<&Separator>, kernel: &StftKernel) -> Result<TfMask> {
    let bf = &cfg.model.beamformer;
    let fs = ex.mixture.sample_rate();
    match cfg.eval.masks {
        MaskSource::Oracle => separator_masks(ex.reference(), &ex.images, kernel, bf, fs),
        MaskSource::Separator => {
            let sep = separator.ok_or_else(|| Error::Config("system needs the separator checkpoint".into()))?;
            separator_masks(ex.reference(), &sep.infer(ex.reference())?, kernel, bf, fs)
        }
    }
}

fn rows_of(w: &MultichannelWave) -> Vec<Vec<f64>> {
    (0..w.channels()).map(|c| w.channel(c).to_vec()).collect()
}

fn evaluate_one(
    ex: &Example,
    cfg: &Config,
    systems: &[System],
    separator: Option<&Separator>,
    vmes: &[(f64, VmeModel)],
    kernel: &StftKernel,
) -> Result<Vec<MetricRow>> {
    let bf = &cfg.model.beamformer;
    let fs = ex.mixture.sample_rate();
    let needs_masks = systems.iter().any(|s| *s != System::Mixture);
    let masks = if needs_masks { Some(masks_for(ex, cfg, separator, kernel)?) } else { None };
    let r = ex.mixture.select(&RM_CHANNELS)?;
    let mut out = Vec::with_capacity(systems.len());
    for sys in systems {
        let (array, v_hat) = match sys {
            System::Mixture => (None, None),
            System::Rm2 => (Some(r.clone()), None),
            System::Rm3 => (Some(ex.mixture.clone()), None),
            System::Vm(a) => {
                let vme = &vmes
                    .iter()
                    .find(|(b, _)| b == a)
                    .ok_or_else(|| Error::Config(format!("system {sys}: no NN-VME checkpoint")))?
                    .1;
                let v_hat = MultichannelWave::mono(vme.infer(&ex.r())?, fs)?;
                (Some(AugmentedArray::with_virtual(&r, &v_hat)?.wave), Some(v_hat))
            }
        };
        let estimates = match &array {
            None => vec![ex.reference().to_vec(); ex.images.len()],
            Some(y) => rows_of(&beamform(y, masks.as_ref().expect("masks"), bf)?.0),
        };
        out.push(MetricRow {
            sample: ex.id.clone(),
            system: sys.name().into(),
            alpha: sys.alpha(),
            sdr_vm: v_hat.map(|v| sdr_vm(ex.v(), v.channel(0))).transpose()?,
            sdr_bf: sdr_bf(&ex.images, &estimates)?.sdr,
        });
    }
    Ok(out)
}

/// Scores every system on every example; rows are ordered by example, then
/// by system.
pub fn evaluate(
    cfg: &Config,
    examples: &[Example],
    systems: &[System],
    separator: Option<&Separator>,
    vmes: &[(f64, VmeModel)],
) -> Result<Vec<MetricRow>> {
    let kernel = StftKernel::new(cfg.model.beamformer.stft)?;
    for s in systems {
        if let System::Vm(a) = s {
            if !vmes.iter().any(|(b, _)| b == a) {
                return Err(Error::Config(format!("system {s}: no NN-VME checkpoint")));
            }
        }
    }
    if cfg.eval.masks == MaskSource::Separator && separator.is_none() && systems.iter().any(|s| *s != System::Mixture) {
        return Err(Error::Config("beamforming systems need the separator checkpoint".into()));
    }
    let per: Vec<Vec<MetricRow>> = examples
        .par_iter()
        .map(|ex| evaluate_one(ex, cfg, systems, separator, vmes, &kernel))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(String::new, |v| format!("{v:.prec$}"))
}

pub const CSV_HEADER: [&str; 5] = ["sample", "system", "alpha", "sdr_vm", "sdr_bf"];

pub fn write_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.sample.clone(),
            r.system.clone(),
            fmt_opt(r.alpha, 2),
            fmt_opt(r.sdr_vm, 6),
            format!("{:.6}", r.sdr_bf),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let parse = |s: &str, what: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .map_err(|_| Error::Data(format!("{}: bad {what} `{s}`", path.display())))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Data(format!("{}: expected {} columns", path.display(), CSV_HEADER.len())));
        }
        rows.push(MetricRow {
            sample: rec[0].to_string(),
            system: rec[1].to_string(),
            alpha: parse(&rec[2], "alpha")?,
            sdr_vm: parse(&rec[3], "sdr_vm")?,
            sdr_bf: parse(&rec[4], "sdr_bf")?
                .ok_or_else(|| Error::Data(format!("{}: missing sdr_bf", path.display())))?,
        });
    }
    Ok(rows)
}

/// Mean metrics of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub system: String,
    pub alpha: Option<f64>,
    pub sdr_vm: Option<f64>,
    pub sdr_bf: f64,
    pub samples: usize,
}

/// Groups rows by `(system, alpha)` in first-appearance order.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, Option<f64>)> = Vec::new();
    for r in rows {
        let k = (r.system.clone(), r.alpha);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(system, alpha)| {
            let g: Vec<&MetricRow> = rows.iter().filter(|r| r.system == system && r.alpha == alpha).collect();
            let n = g.len() as f64;
            let vm: Vec<f64> = g.iter().filter_map(|r| r.sdr_vm).collect();
            SummaryRow {
                sdr_vm: (!vm.is_empty()).then(|| vm.iter().sum::<f64>() / vm.len() as f64),
                sdr_bf: g.iter().map(|r| r.sdr_bf).sum::<f64>() / n,
                samples: g.len(),
                system,
                alpha,
            }
        })
        .collect()
}

fn label(s: &SummaryRow) -> String {
    match s.system.as_str() {
        "mixture" => "Mixture".into(),
        "rm2" => "RM-BF (2ch)".into(),
        "rm3" => "RM-BF (3ch)".into(),
        "vm" => "VM-BF".into(),
        other => other.into(),
    }
}

pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let mut s = String::from("| system | alpha | SDR_VM | SDR_BF |\n|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {:.2} |\n",
            label(r),
            r.alpha.map_or("-".into(), |a| format!("{a:.1}")),
            r.sdr_vm.map_or("-".into(), |v| format!("{v:.2}")),
            r.sdr_bf
        ));
    }
    s
}
