//! α-sweep plots (SVG) and a markdown summary from metric CSVs.

use std::fmt::Write;

use super::evaluate::{summarize, summary_markdown, MetricRow, SummaryRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub sdr_vm_svg: String,
    pub sdr_bf_svg: String,
    pub markdown: String,
    /// α with the highest mean SDR_VM, ties to the smaller α.
    pub best_alpha_vm: Option<f64>,
    pub best_alpha_bf: Option<f64>,
}

struct Series<'a> {
    points: Vec<(f64, f64)>,
    baselines: Vec<(&'a str, f64)>,
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 120.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn line_plot(title: &str, ylabel: &str, s: &Series<'_>) -> String {
    let ys: Vec<f64> = s.points.iter().map(|p| p.1).chain(s.baselines.iter().map(|b| b.1)).collect();
    let (mut lo, mut hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let step = nice_step(hi - lo);
    let lo = (lo / step).floor() * step;
    let hi = (hi / step).ceil() * step;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |a: f64| LEFT + a * pw;
    let y = |v: f64| TOP + (hi - v) / (hi - lo) * ph;
    let mut o = String::new();
    let _ = writeln!(
        o,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(o, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(o, "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{title}</text>", LEFT + pw / 2.0);
    let mut tick = lo;
    while tick <= hi + step * 1e-6 {
        let ty = y(tick);
        let _ = writeln!(o, "<line x1=\"{LEFT:.1}\" y1=\"{ty:.1}\" x2=\"{:.1}\" y2=\"{ty:.1}\" stroke=\"#ddd\"/>", LEFT + pw);
        let _ = writeln!(o, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{tick:.1}</text>", LEFT - 6.0, ty + 4.0);
        tick += step;
    }
    for i in 0..=10 {
        let a = i as f64 / 10.0;
        let _ = writeln!(o, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{a:.1}</text>", x(a), TOP + ph + 16.0);
    }
    let _ = writeln!(o, "<rect x=\"{LEFT:.1}\" y=\"{TOP:.1}\" width=\"{pw:.1}\" height=\"{ph:.1}\" fill=\"none\" stroke=\"black\"/>");
    let _ = writeln!(o, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">α</text>", LEFT + pw / 2.0, H - 12.0);
    let _ = writeln!(
        o,
        "<text transform=\"translate(16 {:.1}) rotate(-90)\" text-anchor=\"middle\">{ylabel}</text>",
        TOP + ph / 2.0
    );
    let dashes = ["6 3", "2 2", "8 2 2 2"];
    for (k, (name, v)) in s.baselines.iter().enumerate() {
        let by = y(*v);
        let _ = writeln!(
            o,
            "<line x1=\"{LEFT:.1}\" y1=\"{by:.1}\" x2=\"{:.1}\" y2=\"{by:.1}\" stroke=\"#777\" stroke-dasharray=\"{}\"/>",
            LEFT + pw,
            dashes[k % dashes.len()]
        );
        let _ = writeln!(o, "<text x=\"{:.1}\" y=\"{:.1}\">{name} ({v:.2})</text>", LEFT + pw + 6.0, by + 4.0);
    }
    if !s.points.is_empty() {
        let path: Vec<String> = s.points.iter().map(|(a, v)| format!("{:.1},{:.1}", x(*a), y(*v))).collect();
        let _ = writeln!(o, "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"2\"/>", path.join(" "));
        for (a, v) in &s.points {
            let _ = writeln!(o, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"#1f5fa8\"/>", x(*a), y(*v));
        }
    }
    o.push_str("</svg>\n");
    o
}

fn argmax(points: &[(f64, f64)]) -> Option<f64> {
    points
        .iter()
        .fold(None::<(f64, f64)>, |best, &(a, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((a, v)),
        })
        .map(|p| p.0)
}

/// Builds both plots and the summary from metric rows.
pub fn build_report(rows: &[MetricRow]) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::Data("no metric rows to report".into()));
    }
    let summary = summarize(rows);
    let mut vm: Vec<&SummaryRow> = summary.iter().filter(|s| s.system == "vm" && s.alpha.is_some()).collect();
    vm.sort_by(|a, b| a.alpha.partial_cmp(&b.alpha).expect("finite alpha"));
    let vm_points: Vec<(f64, f64)> = vm.iter().filter_map(|s| Some((s.alpha?, s.sdr_vm?))).collect();
    let bf_points: Vec<(f64, f64)> = vm.iter().filter_map(|s| Some((s.alpha?, s.sdr_bf))).collect();
    let find = |name: &str| summary.iter().find(|s| s.system == name).map(|s| s.sdr_bf);
    let baselines: Vec<(&str, f64)> = [("RM-BF 3ch", "rm3"), ("RM-BF 2ch", "rm2"), ("Mixture", "mixture")]
        .iter()
        .filter_map(|(label, key)| find(key).map(|v| (*label, v)))
        .collect();
    let sdr_vm_svg = line_plot(
        "SDR_VM vs multi-task weight",
        "SDR_VM (dB)",
        &Series {
            points: vm_points.clone(),
            baselines: Vec::new(),
        },
    );
    let sdr_bf_svg = line_plot(
        "SDR_BF vs multi-task weight",
        "SDR_BF (dB)",
        &Series {
            points: bf_points.clone(),
            baselines,
        },
    );
    let best_alpha_vm = argmax(&vm_points);
    let best_alpha_bf = argmax(&bf_points);
    let mut md = String::from("# Evaluation summary\n\n");
    md.push_str(&summary_markdown(&summary));
    md.push('\n');
    let fmt_best = |a: Option<f64>, pts: &[(f64, f64)]| match a {
        Some(a) => {
            let v = pts.iter().find(|p| p.0 == a).map_or(f64::NAN, |p| p.1);
            format!("α = {a:.1} ({v:.2} dB)")
        }
        None => "n/a".into(),
    };
    let _ = writeln!(md, "Best α for SDR_VM: {}", fmt_best(best_alpha_vm, &vm_points));
    let _ = writeln!(md, "\nBest α for SDR_BF: {}", fmt_best(best_alpha_bf, &bf_points));
    md.push_str("\n![SDR_VM](sdr_vm.svg)\n\n![SDR_BF](sdr_bf.svg)\n");
    Ok(Report {
        sdr_vm_svg,
        sdr_bf_svg,
        markdown: md,
        best_alpha_vm,
        best_alpha_bf,
    })
}
