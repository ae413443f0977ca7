//! Acceptance criteria 1-7. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Criterion 5 trains the desk-scale pipeline. Its run directory is
//! `$VMEKIT_ACCEPTANCE_RUN` (default: the cargo target tmpdir); finished
//! stages found there are resumed, not retrained.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{generate, tiny_config};
use vmekit::beamformer::{apply_bf, mvdr_souden, BfConfig, MvdrWeights, ScmPair, SpatialCovariance};
use vmekit::losses::{pit_bf_loss, pit_select, snr_loss};
use vmekit::nnet::gradcheck::{check_gradients, CheckOptions};
use vmekit::nnet::{AdamState, Graph, Separator, Tensor, TdcnConfig, Var, VmeModel};
use vmekit::pipeline::commands::{cmd_train_separator, cmd_train_vme, metrics_csv};
use vmekit::pipeline::evaluate::summarize;
use vmekit::pipeline::train::{crop_len, epoch_schedule, init_seed, new_separator, train_vme, vme_input, Hooks, VmeData};
use vmekit::pipeline::{cmd_evaluate, cmd_report, load_split, Config, Example, Split, Stage, SummaryRow, System};
use vmekit::room::{generate_sample, rirs_with_reflection, sample_scene, SceneOptions, REF_CHANNEL};
use vmekit::signal::{istft, stft, MultichannelWave, StftConfig, StftKernel, Window};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn project(g: &mut Graph, v: Var, rng_seed: u64) -> vmekit::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = g.constant(rand_tensor(&mut rng, g.shape(v)));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

// ---------------------------------------------------------------- 1

fn stft_roundtrip_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let configs = [
        StftConfig::default(),
        StftConfig {
            frame_length: 256,
            hop: 64,
            window: Window::Hann,
        },
        StftConfig {
            frame_length: 64,
            hop: 16,
            window: Window::SqrtHann,
        },
    ];
    let mut worst = 0.0f64;
    for cfg in configs {
        for len in [1000, 4001, 16000] {
            let rows: Vec<Vec<f64>> = (0..2).map(|_| (0..len).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let w = MultichannelWave::from_channels(rows, 8000).unwrap();
            let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
            let num: f64 = w.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = w.samples().iter().map(|a| a * a).sum();
            worst = worst.max((num / den).sqrt());
        }
    }
    worst
}

type OpCase = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> vmekit::Result<Var>>);

fn op_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut r = |shape: &[usize]| rand_tensor(&mut rng, shape);
    let stft_cfg = StftConfig {
        frame_length: 16,
        hop: 4,
        window: Window::SqrtHann,
    };
    let kernel = Arc::new(StftKernel::new(stft_cfg).unwrap());
    let k2 = kernel.clone();
    let frames = stft_cfg.n_frames(40);
    let mut mask = r(&[5, 4]);
    mask.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.1);
    let mut inv_in = r(&[4, 2, 2, 2]);
    for k in 0..4 {
        for i in 0..2 {
            inv_in.data_mut()[2 * ((k * 2 + i) * 2 + i)] += 2.0;
        }
    }
    let mut herm = Vec::new();
    for _ in 0..3 {
        let a: Vec<f64> = r(&[3, 3, 2]).data().to_vec();
        let at = |i: usize, j: usize| Complex64::new(a[2 * (i * 3 + j)], a[2 * (i * 3 + j) + 1]);
        for i in 0..3 {
            for j in 0..3 {
                let mut z: Complex64 = (0..3).map(|k| at(i, k) * at(j, k).conj()).sum();
                if i == j {
                    z += 1.0;
                }
                herm.extend([z.re, z.im]);
            }
        }
    }
    let herm = Tensor::new(vec![3, 3, 3, 2], herm).unwrap();
    vec![
        ("add/sub/mul/scale", vec![r(&[3, 5]), r(&[3, 5])], Box::new(|g: &mut Graph, v: &[Var]| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[1])?;
            let m = g.mul(d, v[1])?;
            let m = g.scale(m, -1.7);
            project(g, m, 1)
        })),
        ("relu", vec![r(&[3, 5])], Box::new(|g: &mut Graph, v: &[Var]| {
            let y = g.relu(v[0]);
            project(g, y, 2)
        })),
        ("prelu", vec![r(&[3, 5]), Tensor::scalar(0.3)], Box::new(|g: &mut Graph, v: &[Var]| {
            let y = g.prelu(v[0], v[1])?;
            project(g, y, 3)
        })),
        ("weighted_sum/reshape", vec![Tensor::scalar(0.4), r(&[2, 3])], Box::new(|g: &mut Graph, v: &[Var]| {
            let y = g.reshape(v[1], vec![3, 2])?;
            let s = project(g, y, 4)?;
            g.weighted_sum(&[(v[0], 0.3), (s, 2.0)])
        })),
        ("global_layer_norm", vec![r(&[3, 7]), r(&[3]), r(&[3])], Box::new(|g: &mut Graph, v: &[Var]| {
            let y = g.global_layer_norm(v[0], v[1], v[2], 1e-8)?;
            project(g, y, 5)
        })),
        ("conv1x1", vec![r(&[3, 12]), r(&[4, 3]), r(&[4])], Box::new(|g: &mut Graph, v: &[Var]| {
            let y = g.conv1x1(v[0], v[1], Some(v[2]))?;
            project(g, y, 6)
        })),
        ("conv1d_strided", vec![r(&[3, 12]), r(&[5, 3, 4])], Box::new(|g: &mut Graph, v: &[Var]| {
            let y = g.conv1d_strided(v[0], v[1], 2)?;
            project(g, y, 7)
        })),
        ("conv_transpose1d", vec![r(&[3, 6]), r(&[3, 2, 4])], Box::new(|g: &mut Graph, v: &[Var]| {
            let y = g.conv_transpose1d(v[0], v[1], 2)?;
            project(g, y, 8)
        })),
        ("depthwise_conv1d", vec![r(&[3, 12]), r(&[3, 3]), r(&[3])], Box::new(|g: &mut Graph, v: &[Var]| {
            let y = g.depthwise_conv1d(v[0], v[1], v[2], 2)?;
            project(g, y, 9)
        })),
        ("pad/crop/rows/concat", vec![r(&[2, 9])], Box::new(|g: &mut Graph, v: &[Var]| {
            let p = g.pad_time(v[0], 2, 3)?;
            let c = g.crop_time(p, 1, 10)?;
            let row = g.rows(c, 1, 1)?;
            let cat = g.concat_rows(&[c, row])?;
            project(g, cat, 10)
        })),
        ("stft", vec![r(&[2, 40])], Box::new(move |g: &mut Graph, v: &[Var]| {
            let s = g.stft(v[0], &kernel)?;
            project(g, s, 11)
        })),
        ("istft", vec![r(&[1, frames, stft_cfg.n_bins(), 2])], Box::new(move |g: &mut Graph, v: &[Var]| {
            let y = g.istft(v[0], &k2, 40)?;
            project(g, y, 12)
        })),
        ("magnitude_ratio_mask/complement", vec![r(&[2, 3, 4, 2]), r(&[1, 3, 4, 2])], Box::new(|g: &mut Graph, v: &[Var]| {
            let m = g.magnitude_ratio_mask(v[0], v[1], 1e-8, 2.0)?;
            let c = g.complement_mask(m);
            let both = g.concat_rows(&[m, c])?;
            project(g, both, 13)
        })),
        ("masked_covariance/diagonal_loading", vec![r(&[3, 5, 4, 2]), mask], Box::new(|g: &mut Graph, v: &[Var]| {
            let (phi, _) = g.masked_covariance(v[0], v[1])?;
            let l = g.diagonal_loading(phi, 0.3)?;
            project(g, l, 14)
        })),
        ("cmatmul", vec![r(&[3, 2, 2, 2]), r(&[3, 2, 3, 2])], Box::new(|g: &mut Graph, v: &[Var]| {
            let p = g.cmatmul(v[0], v[1])?;
            project(g, p, 15)
        })),
        ("ctrace/ccolumn", vec![r(&[3, 2, 2, 2])], Box::new(|g: &mut Graph, v: &[Var]| {
            let t = g.ctrace(v[0])?;
            let c = g.ccolumn(v[0], 1)?;
            let a = project(g, t, 16)?;
            let b = project(g, c, 17)?;
            g.weighted_sum(&[(a, 1.0), (b, 1.0)])
        })),
        ("cinv", vec![inv_in], Box::new(|g: &mut Graph, v: &[Var]| {
            let y = g.cinv(v[0], false)?;
            project(g, y, 18)
        })),
        ("cinv hermitian", vec![herm], Box::new(|g: &mut Graph, v: &[Var]| {
            let y = g.cinv(v[0], true)?;
            project(g, y, 19)
        })),
        ("cdiv_safe", vec![r(&[3, 2, 2]), r(&[3, 2])], Box::new(|g: &mut Graph, v: &[Var]| {
            let (q, _) = g.cdiv_safe(v[0], v[1], 1e-12)?;
            project(g, q, 20)
        })),
        ("apply_weights", vec![r(&[4, 3, 2]), r(&[3, 2, 4, 2])], Box::new(|g: &mut Graph, v: &[Var]| {
            let x = g.apply_weights(v[0], v[1])?;
            project(g, x, 21)
        })),
        ("snr_loss", vec![r(&[1, 9]), r(&[1, 9])], Box::new(|g: &mut Graph, v: &[Var]| g.snr_loss(v[0], v[1], 1e-8, -60.0))),
        ("pit_snr_loss", vec![r(&[1, 9]), r(&[1, 9]), r(&[1, 9]), r(&[1, 9])], Box::new(|g: &mut Graph, v: &[Var]| {
            Ok(g.pit_snr_loss(&v[..2], &v[2..], 1e-8, -60.0)?.0)
        })),
        ("mtl_loss", vec![Tensor::scalar(0.7), Tensor::scalar(-1.2)], Box::new(|g: &mut Graph, v: &[Var]| {
            let cfg = vmekit::losses::MtlConfig::with_alpha(0.3)?;
            g.mtl_loss(&cfg, v[0], v[1])
        })),
    ]
}

fn end_to_end_bf_gradient() -> f64 {
    let stft_cfg = StftConfig {
        frame_length: 4,
        hop: 2,
        window: Window::SqrtHann,
    };
    let cfg = BfConfig {
        stft: stft_cfg,
        ..BfConfig::default()
    };
    let kernel = Arc::new(StftKernel::new(stft_cfg).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let len = 6;
    let frames = stft_cfg.n_frames(len);
    let y = rand_tensor(&mut rng, &[2, len]);
    let m = Tensor::new(
        vec![1, frames, stft_cfg.n_bins()],
        (0..frames * stft_cfg.n_bins()).map(|_| rng.gen_range(0.2..0.8)).collect(),
    )
    .unwrap();
    let reference = rand_tensor(&mut rng, &[1, len]);
    let opts = CheckOptions {
        step: 1e-6,
        ..CheckOptions::default()
    };
    check_gradients(
        &[y, m],
        |g, v| {
            let (x, _) = g.mask_bf(v[0], v[1], &kernel, &cfg)?;
            let r = g.constant(reference.clone());
            g.snr_loss(r, x, 1e-8, -60.0)
        },
        &opts,
    )
    .unwrap()
    .max_rel_err
}

fn criterion_1() -> Outcome {
    let rt = stft_roundtrip_error();
    ensure(rt < 1e-6, || format!("STFT round-trip relative error {rt:e} >= 1e-6"))?;
    let mut worst = (0.0f64, "");
    let cases = op_cases();
    for (name, inputs, f) in &cases {
        let rep = check_gradients(inputs, |g, v| f(g, v), &CheckOptions::default()).map_err(e2s)?;
        ensure(rep.checked > 0, || format!("{name}: nothing checked"))?;
        if rep.max_rel_err > worst.0 {
            worst = (rep.max_rel_err, name);
        }
    }
    ensure(worst.0 < 1e-4, || format!("op {} gradient rel. error {:e} >= 1e-4", worst.1, worst.0))?;
    let e2e = end_to_end_bf_gradient();
    ensure(e2e < 1e-3, || format!("masks->SCM->MVDR->iSTFT->SNR rel. error {e2e:e} >= 1e-3"))?;
    Ok(format!(
        "STFT round trip {rt:.1e}; {} ops, worst gradient rel. error {:.1e} ({}); end-to-end {e2e:.1e}",
        cases.len(),
        worst.0,
        worst.1
    ))
}

// ---------------------------------------------------------------- 2

fn crand(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn hermitian_pd(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let a: Vec<Complex64> = (0..n * n).map(|_| crand(rng)).collect();
    let mut m = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = (0..n).map(|k| a[i * n + k] * a[j * n + k].conj()).sum();
        }
        m[i * n + i] += 0.5;
    }
    // Exact Hermitian symmetry.
    for i in 0..n {
        m[i * n + i].im = 0.0;
        for j in 0..i {
            m[i * n + j] = m[j * n + i].conj();
        }
    }
    m
}

fn scm(s: Vec<Complex64>, n: Vec<Complex64>, ch: usize) -> ScmPair {
    ScmPair {
        speech: SpatialCovariance::new(s, 1, ch).unwrap(),
        noise: SpatialCovariance::new(n, 1, ch).unwrap(),
        fallback_bins: vec![],
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let ch = 2 + draw % 3;
        let d: Vec<Complex64> = (0..ch).map(|_| crand(&mut rng)).collect();
        let power = rng.gen_range(0.1..10.0);
        let phi_s: Vec<Complex64> = (0..ch * ch).map(|k| d[k / ch] * d[k % ch].conj() * power).collect();
        let cfg = BfConfig {
            ref_channel: draw % ch,
            ..BfConfig::default()
        };
        let w = mvdr_souden(&scm(phi_s, hermitian_pd(&mut rng, ch), ch), &cfg).map_err(e2s)?;
        let resp: Complex64 = (0..ch).map(|k| w.get(0, k).conj() * d[k]).sum();
        worst = worst.max((resp - d[cfg.ref_channel]).norm());
    }
    ensure(worst < 1e-8, || format!("|w^H d - d[ref]| = {worst:e} >= 1e-8"))?;

    let cfg = BfConfig::default();
    let s = hermitian_pd(&mut rng, 3);
    let n = hermitian_pd(&mut rng, 3);
    let w = mvdr_souden(&scm(s.clone(), n.clone(), 3), &cfg).map_err(e2s)?;
    let mut scale_err = 0.0f64;
    for gamma in [1e-3, 0.25, 3.0, 1e3] {
        let wg = mvdr_souden(&scm(s.iter().map(|z| z * gamma).collect(), n.clone(), 3), &cfg).map_err(e2s)?;
        for (a, b) in w.weights.iter().zip(&wg.weights) {
            scale_err = scale_err.max((a - b).norm());
        }
    }
    ensure(scale_err < 1e-12, || format!("Phi_S scale changed w by {scale_err:e}"))?;

    let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..3000).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let spec = stft(&MultichannelWave::from_channels(rows, 8000).unwrap(), &StftConfig::default()).unwrap();
    let bins = spec.n_bins();
    for k in 0..3 {
        let weights = MvdrWeights {
            weights: (0..bins * 3)
                .map(|i| Complex64::new(if i % 3 == k { 1.0 } else { 0.0 }, 0.0))
                .collect(),
            bins,
            channels: 3,
            degenerate_bins: vec![],
        };
        let out = apply_bf(&weights, &spec).map_err(e2s)?;
        ensure(out.channel(0) == spec.channel(k), || format!("selector for channel {k} is not exact"))?;
    }
    Ok(format!(
        "distortionless max {worst:.1e} over 100 draws; scale invariance {scale_err:.1e}; selector exact on 3 channels"
    ))
}

// ---------------------------------------------------------------- 3

/// Minimum over permutations generated independently by Heap's algorithm,
/// summing each permutation's costs in row order.
fn heap_minimum(costs: &[Vec<f64>]) -> f64 {
    let n = costs.len();
    let mut p: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| {
        let mut t = 0.0;
        for (i, &j) in p.iter().enumerate() {
            t += costs[i][j];
        }
        t
    };
    let mut best = total(&p);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            best = best.min(total(&p));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for n in 1..=3 {
        for trial in 0..1000 {
            let costs: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-40.0..40.0)).collect()).collect();
            let (got, perm) = pit_select(&costs).map_err(e2s)?;
            let want = heap_minimum(&costs);
            ensure(got == want, || format!("I={n} trial {trial}: pit {got} vs exhaustive {want}"))?;
            let via: f64 = perm.iter().enumerate().map(|(i, &j)| costs[i][j]).fold(0.0, |a, b| a + b);
            ensure(via == got, || format!("I={n} trial {trial}: permutation does not attain the minimum"))?;
        }
    }
    // The waveform-level loss builds its matrix from pairwise SNR losses.
    for n in 1..=3 {
        for trial in 0..50 {
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..64).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let e: Vec<Vec<f64>> = (0..n).map(|_| (0..64).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let costs: Vec<Vec<f64>> = x.iter().map(|r| e.iter().map(|s| snr_loss(r, s).unwrap()).collect()).collect();
            let (got, _) = pit_bf_loss(&x, &e).map_err(e2s)?;
            let want = heap_minimum(&costs);
            ensure(got == want, || format!("pit_bf_loss I={n} trial {trial}: {got} vs {want}"))?;
        }
    }
    Ok("3000 cost matrices (I = 1, 2, 3) and 150 waveform sets equal the exhaustive minimum exactly".into())
}

// ---------------------------------------------------------------- 4

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|s| s * s).sum()
}

fn criterion_4() -> Outcome {
    let opts = SceneOptions::default();
    let fs = 8000.0;
    let mut worst_delay = 0.0f64;
    for k in 0..100u64 {
        let scene = sample_scene(0xacce_0000 + k, &opts);
        let beta = scene.room.reflection_coefficient().map_err(e2s)?;
        for src in &scene.source_positions {
            let rirs = rirs_with_reflection(&scene.room, beta, src, &scene.mic_positions, fs, None).map_err(e2s)?;
            for (h, mic) in rirs.iter().zip(&scene.mic_positions) {
                let d = dist(src, mic);
                let want = d / scene.room.speed_of_sound * fs;
                // Onset: first sample reaching half the free-field amplitude.
                let level = 0.5 / (4.0 * std::f64::consts::PI * d);
                let onset = h.iter().position(|v| v.abs() >= level).ok_or("no direct path found")?;
                worst_delay = worst_delay.max((onset as f64 - want).abs());
            }
        }
    }
    ensure(worst_delay <= 1.0, || format!("direct-path peak {worst_delay:.2} samples from geometry"))?;

    let mut worst_gain = 0.0f64;
    for k in 0..5u64 {
        let s = generate_sample(0xacce_1000 + k, 4000, 8000, &opts).map_err(e2s)?;
        for c in 0..s.mixture.channels() {
            for t in 0..s.mixture.len() {
                let sum: f64 = s.images.iter().map(|w| w.channel(c)[t]).sum::<f64>() + s.noise.channel(c)[t];
                ensure(s.mixture.channel(c)[t] == sum, || format!("sample {k}: mixture is not the exact sum"))?;
            }
        }
        let e = |w: &MultichannelWave| energy(w.channel(REF_CHANNEL));
        let e1 = e(&s.images[0]);
        for (i, sir) in s.scene.sir_db.iter().enumerate() {
            worst_gain = worst_gain.max((10.0 * (e1 / e(&s.images[i + 1])).log10() - sir).abs());
        }
        let speech: Vec<f64> = (0..s.mixture.len())
            .map(|t| s.images.iter().map(|w| w.channel(REF_CHANNEL)[t]).sum())
            .collect();
        worst_gain = worst_gain.max((10.0 * (energy(&speech) / e(&s.noise)).log10() - s.scene.noise_snr_db).abs());
    }
    ensure(worst_gain < 1e-9, || format!("SIR/SNR off target by {worst_gain:e} dB"))?;
    Ok(format!(
        "direct path within {worst_delay:.2} samples over 100 scenes; mixtures exact; gains within {worst_gain:.1e} dB"
    ))
}

// ---------------------------------------------------------------- 5

const TREND_ALPHAS: [f64; 3] = [0.0, 0.3, 1.0];

fn run_dir() -> PathBuf {
    std::env::var_os("VMEKIT_ACCEPTANCE_RUN")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk"))
}

/// Runs (or resumes) the desk pipeline in `out` and returns the summary.
fn desk_summary(cfg: &Config, out: &Path) -> Result<Vec<SummaryRow>, String> {
    let stamp = out.join("config.toml");
    let text = cfg.to_toml();
    if stamp.exists() && fs::read_to_string(&stamp).map_err(e2s)? != text {
        return Err(format!("{} holds a run with a different configuration", out.display()));
    }
    fs::create_dir_all(out).map_err(e2s)?;
    fs::write(&stamp, &text).map_err(e2s)?;
    if !out.join("data").join("manifest.jsonl").exists() {
        vmekit::pipeline::cmd_gen_data(cfg, out).map_err(e2s)?;
    }
    cmd_train_separator(cfg, out, true).map_err(e2s)?;
    cmd_train_vme(cfg, out, &TREND_ALPHAS, true).map_err(e2s)?;
    let mut systems = vec![System::Mixture, System::Rm2, System::Rm3];
    systems.extend(TREND_ALPHAS.iter().map(|&a| System::Vm(a)));
    let rows = cmd_evaluate(cfg, out, &systems).map_err(e2s)?;
    cmd_report(out, &[metrics_csv(out)]).map_err(e2s)?;
    Ok(summarize(&rows))
}

fn criterion_5() -> Outcome {
    let cfg = Config::desk();
    let out = run_dir();
    let t0 = Instant::now();
    let summary = desk_summary(&cfg, &out)?;
    let get = |name: &str, alpha: Option<f64>| {
        summary
            .iter()
            .find(|s| s.system == name && s.alpha == alpha)
            .ok_or_else(|| format!("no {name} {alpha:?} in the summary"))
    };
    let rm2 = get("rm2", None)?.sdr_bf;
    let rm3 = get("rm3", None)?.sdr_bf;
    let vm: Vec<(f64, f64, f64)> = TREND_ALPHAS
        .iter()
        .map(|&a| {
            let s = get("vm", Some(a))?;
            Ok((a, s.sdr_vm.ok_or("missing SDR_VM")?, s.sdr_bf))
        })
        .collect::<Result<_, String>>()?;
    let at = |a: f64| *vm.iter().find(|v| v.0 == a).expect("trend alpha");
    let best_bf = vm.iter().map(|v| v.2).fold(f64::NEG_INFINITY, f64::max);
    let (_, vm0, _) = at(0.0);
    let (_, vm3, bf3) = at(0.3);
    let (_, vm1, bf1) = at(1.0);
    let detail = format!(
        "rm2 {rm2:.2}, rm3 {rm3:.2}, VM-BF(best) {best_bf:.2}; SDR_VM α=0 {vm0:.2}, α=0.3 {vm3:.2}, α=1 {vm1:.2}; \
         SDR_BF α=0.3 {bf3:.2}, α=1 {bf1:.2} dB ({} eval mixtures, {:.0} s, run {})",
        get("rm2", None)?.samples,
        t0.elapsed().as_secs_f64(),
        out.display()
    );
    let mut failed = Vec::new();
    if !(best_bf - rm2 >= 1.0) {
        failed.push("(a) VM-BF(best) - RM-BF(2ch) < 1 dB");
    }
    if !(rm3 >= best_bf - 0.5) {
        failed.push("(b) RM-BF(3ch) < VM-BF - 0.5 dB");
    }
    if !(vm1 - vm0 >= 10.0) {
        failed.push("(c) SDR_VM(1) - SDR_VM(0) < 10 dB");
    }
    if !((vm3 - vm1).abs() <= 2.0 && bf3 >= bf1) {
        failed.push("(d) α=0.3 not within 2 dB SDR_VM of α=1 with SDR_BF at least α=1's");
    }
    let held: Vec<&str> = ["(a)", "(b)", "(c)", "(d)"]
        .into_iter()
        .filter(|k| !failed.iter().any(|f| f.starts_with(k)))
        .collect();
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; holds: {}; {detail}", failed.join(", "), held.join(" ")))
    }
}

// ---------------------------------------------------------------- 6

enum Branch {
    VmOnly,
    BfOnly,
}

/// Parameters after every step of an NN-VME trained on one loss term only,
/// written without the multi-task objective.
fn single_loss_trajectory(cfg: &Config, data: &VmeData<'_>, branch: Branch) -> vmekit::Result<Vec<Vec<Tensor>>> {
    let vme = VmeModel::new(cfg.model.vme, init_seed(cfg.seed, Stage::Vme))?;
    let sc = &cfg.train.vme;
    let mut params = vme.net.params.tensors.clone();
    let mut adam = AdamState::new(&params, sc.learning_rate, sc.clip_norm);
    let bf = cfg.model.beamformer;
    let kernel = Arc::new(StftKernel::new(bf.stft)?);
    let lens: Vec<usize> = data.train.iter().map(Example::len).collect();
    let crop = crop_len(sc, cfg.data.sample_rate, *lens.iter().min().unwrap());
    let (eps, floor) = (cfg.train.snr_epsilon, cfg.train.loss_floor_db);
    let mut out = Vec::new();
    for epoch in 1..=sc.epochs {
        for batch in epoch_schedule(cfg.seed, Stage::Vme, epoch, &lens, crop).chunks(sc.batch_size) {
            let mut total: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.len()]).collect();
            for it in batch {
                let ex = &data.train[it.example];
                let input = vme_input(ex, &data.train_separated[it.example], it.start, crop, &kernel, &bf)?;
                let mut g = Graph::new();
                let p: Vec<Var> = params.iter().map(|t| g.leaf(t.clone())).collect();
                let r = g.constant(Tensor::new(vec![2, crop], input.r.concat())?);
                let v_hat = vme.forward(&mut g, &p, r)?;
                let loss = match branch {
                    Branch::VmOnly => {
                        let v = g.constant(Tensor::new(vec![1, crop], input.v.clone())?);
                        g.snr_loss(v, v_hat, eps, floor)?
                    }
                    Branch::BfOnly => {
                        let r0 = g.rows(r, 0, 1)?;
                        let r1 = g.rows(r, 1, 1)?;
                        let y = g.concat_rows(&[r0, v_hat, r1])?;
                        let m = &input.masks;
                        let masks = g.constant(Tensor::new(vec![m.sources(), m.frames(), m.bins()], m.values().to_vec())?);
                        let (x_bf, _) = g.mask_bf(y, masks, &kernel, &bf)?;
                        let ests: Vec<Var> = (0..input.x.len()).map(|i| g.rows(x_bf, i, 1)).collect::<vmekit::Result<_>>()?;
                        let refs: Vec<Var> = input
                            .x
                            .iter()
                            .map(|x| Ok(g.constant(Tensor::new(vec![1, crop], x.clone())?)))
                            .collect::<vmekit::Result<_>>()?;
                        g.pit_snr_loss(&refs, &ests, eps, floor)?.0
                    }
                };
                let mut grads = g.backward(loss)?;
                for (acc, v) in total.iter_mut().zip(&p) {
                    if let Some(gr) = grads.take(*v) {
                        for (a, b) in acc.iter_mut().zip(gr) {
                            *a += b;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for acc in &mut total {
                acc.iter_mut().for_each(|a| *a *= scale);
            }
            adam.clipped_step(&mut params, &mut total)?;
            out.push(params.clone());
        }
    }
    Ok(out)
}

fn mtl_trajectory(cfg: &Config, data: &VmeData<'_>, alpha: f64) -> vmekit::Result<Vec<Vec<Tensor>>> {
    let mut steps = Vec::new();
    let mut on_step = |_: u64, p: &[Tensor]| steps.push(p.to_vec());
    let mut hooks = Hooks {
        on_step: Some(&mut on_step),
        ..Hooks::default()
    };
    train_vme(cfg, alpha, data, None, &mut hooks)?;
    Ok(steps)
}

fn bitwise_equal(a: &[Vec<Tensor>], b: &[Vec<Tensor>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.len() == y.len()
                && x.iter().zip(y).all(|(s, t)| {
                    s.shape() == t.shape() && s.data().iter().zip(t.data()).all(|(u, v)| u.to_bits() == v.to_bits())
                })
        })
}

fn criterion_6() -> Outcome {
    let mut cfg = tiny_config(600);
    cfg.data.n_train = 6;
    cfg.model.vme = TdcnConfig::desk(2, 1);
    cfg.train.vme.epochs = 2;
    cfg.train.vme.batch_size = 3;
    let dir = tempfile::tempdir().map_err(e2s)?;
    generate(&cfg, dir.path());
    let data_dir = dir.path().join("data");
    let train = load_split(&data_dir, Split::Train).map_err(e2s)?;
    let dev = load_split(&data_dir, Split::Dev).map_err(e2s)?;
    let sep = Separator::from_net(new_separator(&cfg).map_err(e2s)?.net).map_err(e2s)?;
    let data = VmeData::new(&cfg, &sep, &train, &dev).map_err(e2s)?;

    let vm_ref = single_loss_trajectory(&cfg, &data, Branch::VmOnly).map_err(e2s)?;
    let bf_ref = single_loss_trajectory(&cfg, &data, Branch::BfOnly).map_err(e2s)?;
    let a1 = mtl_trajectory(&cfg, &data, 1.0).map_err(e2s)?;
    let a0 = mtl_trajectory(&cfg, &data, 0.0).map_err(e2s)?;
    ensure(!vm_ref.is_empty(), || "no optimiser steps".into())?;
    ensure(bitwise_equal(&a1, &vm_ref), || "α=1 trajectory differs from VM-loss-only training".into())?;
    ensure(bitwise_equal(&a0, &bf_ref), || "α=0 trajectory differs from BF-loss-only training".into())?;
    ensure(!bitwise_equal(&vm_ref, &bf_ref), || "VM-only and BF-only trajectories coincide".into())?;
    Ok(format!(
        "α=1 ≡ VM-only and α=0 ≡ BF-only, bitwise over {} steps of a {}-parameter NN-VME",
        vm_ref.len(),
        vm_ref[0].iter().map(Tensor::len).sum::<usize>()
    ))
}

// ---------------------------------------------------------------- 7

fn full_run(cfg: &Config, out: &Path) -> Result<Vec<u8>, String> {
    vmekit::pipeline::cmd_gen_data(cfg, out).map_err(e2s)?;
    cmd_train_separator(cfg, out, false).map_err(e2s)?;
    cmd_train_vme(cfg, out, &cfg.eval.alphas, false).map_err(e2s)?;
    let systems = System::parse_list(&cfg.eval.systems, &cfg.eval.alphas).map_err(e2s)?;
    cmd_evaluate(cfg, out, &systems).map_err(e2s)?;
    fs::read(metrics_csv(out)).map_err(e2s)
}

fn criterion_7() -> Outcome {
    let cfg = tiny_config(700);
    let a = tempfile::tempdir().map_err(e2s)?;
    let b = tempfile::tempdir().map_err(e2s)?;
    let ca = full_run(&cfg, a.path())?;
    let cb = full_run(&cfg, b.path())?;
    ensure(ca == cb, || "metric CSVs differ between identical runs".into())?;
    let lines = ca.iter().filter(|&&c| c == b'\n').count();
    Ok(format!("two full runs wrote byte-identical metric CSVs ({} bytes, {lines} lines)", ca.len()))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 7] = [
        (1, "numerical core", criterion_1),
        (2, "MVDR correctness", criterion_2),
        (3, "PIT oracle equivalence", criterion_3),
        (4, "simulation fidelity", criterion_4),
        (5, "trend reproduction", criterion_5),
        (6, "multi-task endpoint identities", criterion_6),
        (7, "determinism", criterion_7),
    ];
    let only: Option<Vec<u32>> = std::env::var("VMEKIT_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failures = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS criterion {n} ({name}, {secs:.1} s): {d}"),
            Err(d) => {
                failures += 1;
                println!("FAIL criterion {n} ({name}, {secs:.1} s): {d}");
            }
        }
    }
    if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
