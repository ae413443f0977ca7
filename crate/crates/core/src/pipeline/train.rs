//! Two-stage training: the PIT separator, then the NN-VME under the
//! multi-task loss with the separator frozen.

use std::sync::Arc;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{Checkpoint, EpochLog, Stage};
use super::config::{Config, StageConfig};
use super::dataset::{mix64, Example};
use crate::beamformer::{beamform, magnitude_ratio_masks, AugmentedArray, BfConfig, TfMask};
use crate::error::{Error, Result};
use crate::losses::{mtl_value, pit_bf_loss, snr_loss_with, MtlConfig};
use crate::nnet::{AdamState, Graph, Separator, Tdcn, Tensor, Var, VmeModel};
use crate::signal::{stft_with, MultichannelWave, StftKernel};

/// One training item: an example and the start of its crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Item {
    pub example: usize,
    pub start: usize,
}

/// Model initialisation seed of a stage.
pub fn init_seed(master: u64, stage: Stage) -> u64 {
    mix64(master ^ stage.tag())
}

pub fn crop_len(stage: &StageConfig, sample_rate: u32, len: usize) -> usize {
    let c = (stage.crop_s * sample_rate as f64).round() as usize;
    if c == 0 { len } else { c.min(len) }
}

/// Shuffled items of epoch `epoch` (1-based), each with a random crop.
pub fn epoch_schedule(master: u64, stage: Stage, epoch: usize, lens: &[usize], crop: usize) -> Vec<Item> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(mix64(master ^ stage.tag()) ^ epoch as u64));
    let mut order: Vec<usize> = (0..lens.len()).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .map(|i| {
            let slack = lens[i].saturating_sub(crop);
            Item {
                example: i,
                start: if slack == 0 { 0 } else { rng.gen_range(0..=slack) },
            }
        })
        .collect()
}

/// Per-item gradients from `f`, reduced in item order and divided by the
/// batch size. Returns the mean of the `K` statistics too.
pub fn batch_gradients<T, F, const K: usize>(params: &[Tensor], items: &[T], f: F) -> Result<(Vec<Vec<f64>>, [f64; K])>
where
    T: Sync,
    F: Fn(&mut Graph, &[Var], &T) -> Result<(Var, [f64; K])> + Sync,
{
    let per_item = items
        .par_iter()
        .map(|it| {
            let mut g = Graph::new();
            let p: Vec<Var> = params.iter().map(|t| g.leaf(t.clone())).collect();
            let (loss, stats) = f(&mut g, &p, it)?;
            let mut grads = g.backward(loss)?;
            let gr: Vec<Vec<f64>> = p
                .iter()
                .zip(params)
                .map(|(v, t)| grads.take(*v).unwrap_or_else(|| vec![0.0; t.len()]))
                .collect();
            Ok((gr, stats))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / items.len() as f64;
    let mut total: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut stats = [0.0; K];
    for (gr, st) in &per_item {
        for (acc, g) in total.iter_mut().zip(gr) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        for (a, b) in stats.iter_mut().zip(st) {
            *a += b;
        }
    }
    for acc in &mut total {
        for a in acc.iter_mut() {
            *a *= scale;
        }
    }
    for s in &mut stats {
        *s *= scale;
    }
    Ok((total, stats))
}

fn check_finite(vals: &[f64], what: &str) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Training(format!("{what}: non-finite loss {vals:?}")))
    }
}

fn row(g: &mut Graph, x: &[f64]) -> Var {
    g.constant(Tensor::new(vec![1, x.len()], x.to_vec()).expect("row"))
}

/// Hooks called during training.
pub struct Hooks<'a> {
    /// After every optimiser step, with the updated parameters.
    pub on_step: Option<&'a mut dyn FnMut(u64, &[Tensor])>,
    /// After every epoch, including the untrained evaluation at epoch 0.
    pub on_epoch: Option<&'a mut dyn FnMut(&Checkpoint) -> Result<()>>,
    /// Stops after this many epochs in total.
    pub stop_after: Option<usize>,
}

impl Default for Hooks<'_> {
    fn default() -> Self {
        Self {
            on_step: None,
            on_epoch: None,
            stop_after: None,
        }
    }
}

/// Runs epochs `ck.epochs_done + 1 ..= stage.epochs`. `item_loss` builds the
/// loss of one item with `K` logged statistics; `dev` scores the model.
#[allow(clippy::too_many_arguments)]
fn run_stage<F, D, const K: usize>(
    mut ck: Checkpoint,
    stage_cfg: &StageConfig,
    lens: &[usize],
    crop: usize,
    hooks: &mut Hooks<'_>,
    item_loss: F,
    dev: D,
    log: impl Fn(&mut EpochLog, [f64; K]),
) -> Result<Checkpoint>
where
    F: Fn(&Tdcn, &mut Graph, &[Var], &Item) -> Result<(Var, [f64; K])> + Sync,
    D: Fn(&Tdcn) -> Result<(f64, Option<f64>, Option<f64>)>,
{
    let started = Instant::now();
    let stage = ck.stage;
    if ck.epochs_done == 0 && ck.history.is_empty() {
        let (dev_loss, dev_vm, dev_bf) = dev(&ck.net)?;
        check_finite(&[dev_loss], "initial dev loss")?;
        ck.history.push(EpochLog {
            stage,
            epoch: 0,
            steps: 0,
            alpha: ck.alpha,
            train_loss: None,
            train_vm: None,
            train_bf: None,
            dev_loss,
            dev_vm,
            dev_bf,
            grad_norm: None,
            wall_s: started.elapsed().as_secs_f64(),
        });
        if let Some(f) = hooks.on_epoch.as_mut() {
            f(&ck)?;
        }
    }
    let last = hooks.stop_after.map_or(stage_cfg.epochs, |s| s.min(stage_cfg.epochs));
    while ck.epochs_done < last {
        let epoch = ck.epochs_done + 1;
        let items = epoch_schedule(ck.seed, stage, epoch, lens, crop);
        let mut sums = [0.0; K];
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for batch in items.chunks(stage_cfg.batch_size) {
            let net = &ck.net;
            let (mut grads, stats) =
                batch_gradients(&net.params.tensors, batch, |g, p, it| item_loss(net, g, p, it))?;
            check_finite(&stats, &format!("{stage:?} epoch {epoch} step {}", ck.optimizer.step + 1))?;
            let params = &mut ck.net.params.tensors;
            let norm = ck.optimizer.clipped_step(params, &mut grads)?;
            if let Some(f) = hooks.on_step.as_mut() {
                f(ck.optimizer.step, params);
            }
            for (a, b) in sums.iter_mut().zip(stats) {
                *a += b;
            }
            norm_sum += norm;
            batches += 1;
        }
        let (dev_loss, dev_vm, dev_bf) = dev(&ck.net)?;
        check_finite(&[dev_loss], &format!("{stage:?} epoch {epoch} dev loss"))?;
        let mut entry = EpochLog {
            stage,
            epoch,
            steps: ck.optimizer.step,
            alpha: ck.alpha,
            train_loss: None,
            train_vm: None,
            train_bf: None,
            dev_loss,
            dev_vm,
            dev_bf,
            grad_norm: Some(norm_sum / batches.max(1) as f64),
            wall_s: started.elapsed().as_secs_f64(),
        };
        log(&mut entry, sums.map(|s| s / batches.max(1) as f64));
        info!(
            "{stage:?} epoch {epoch}/{}: train {:.3} dev {dev_loss:.3} ({:.1}s)",
            stage_cfg.epochs,
            entry.train_loss.unwrap_or(f64::NAN),
            entry.wall_s
        );
        ck.history.push(entry);
        ck.epochs_done = epoch;
        if let Some(f) = hooks.on_epoch.as_mut() {
            f(&ck)?;
        }
    }
    Ok(ck)
}

fn dev_subset<'a>(dev: &'a [Example], limit: usize) -> &'a [Example] {
    if limit == 0 { dev } else { &dev[..limit.min(dev.len())] }
}

/// Fresh separator checkpoint for `cfg`.
pub fn new_separator(cfg: &Config) -> Result<Checkpoint> {
    let sep = Separator::new(cfg.model.separator, init_seed(cfg.seed, Stage::Separator))?;
    let adam = AdamState::new(&sep.net.params.tensors, cfg.train.separator.learning_rate, cfg.train.separator.clip_norm);
    Ok(Checkpoint::new(Stage::Separator, cfg.seed, None, sep.net, adam))
}

/// Mean PIT SNR loss of the separator on whole utterances.
pub fn separator_dev_loss(sep: &Separator, dev: &[Example]) -> Result<f64> {
    let losses = dev
        .par_iter()
        .map(|ex| {
            let est = sep.infer(ex.reference())?;
            Ok(pit_bf_loss(&ex.images, &est)?.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// PIT training of the separator on the ch4 mixture.
pub fn train_separator(
    cfg: &Config,
    train: &[Example],
    dev: &[Example],
    resume: Option<Checkpoint>,
    hooks: &mut Hooks<'_>,
) -> Result<Checkpoint> {
    let ck = match resume {
        Some(c) => c,
        None => new_separator(cfg)?,
    };
    let sc = &cfg.train.separator;
    let lens: Vec<usize> = train.iter().map(Example::len).collect();
    let crop = crop_len(sc, cfg.data.sample_rate, lens.iter().copied().min().unwrap_or(0));
    let devs = dev_subset(dev, sc.dev_limit);
    let (eps, floor) = (cfg.train.snr_epsilon, cfg.train.loss_floor_db);
    run_stage(
        ck,
        sc,
        &lens,
        crop,
        hooks,
        |net, g, p, it| {
            let ex = &train[it.example];
            let span = it.start..it.start + crop;
            let mix = row(g, &ex.reference()[span.clone()]);
            let heads = net.forward(g, p, mix)?;
            let refs: Vec<Var> = ex.images.iter().map(|x| row(g, &x[span.clone()])).collect();
            let (loss, _) = g.pit_snr_loss(&refs, &heads, eps, floor)?;
            let v = g.value(loss).item();
            Ok((loss, [v]))
        },
        |net| {
            let sep = Separator::from_net(net.clone())?;
            Ok((separator_dev_loss(&sep, devs)?, None, None))
        },
        |e, [l]| e.train_loss = Some(l),
    )
}

/// Everything the multi-task objective needs for one training crop.
#[derive(Debug, Clone)]
pub struct VmeInput {
    /// Real microphones (ch4, ch6), `[2][T]`.
    pub r: Vec<Vec<f64>>,
    /// Recording at ch5.
    pub v: Vec<f64>,
    /// Reference images at ch4.
    pub x: Vec<Vec<f64>>,
    /// Frozen-separator masks on the ch4 observation.
    pub masks: TfMask,
}

/// Magnitude-ratio masks of the separated signals against the ch4 mixture.
pub fn separator_masks(reference: &[f64], separated: &[Vec<f64>], kernel: &StftKernel, bf: &BfConfig, fs: u32) -> Result<TfMask> {
    let obs = stft_with(kernel, &MultichannelWave::mono(reference.to_vec(), fs)?)?;
    let seps = stft_with(kernel, &MultichannelWave::from_channels(separated.to_vec(), fs)?)?;
    magnitude_ratio_masks(&obs, &seps, bf)
}

/// Crops `ex` and its separator outputs to `[start, start + len)`.
pub fn vme_input(ex: &Example, separated: &[Vec<f64>], start: usize, len: usize, kernel: &StftKernel, bf: &BfConfig) -> Result<VmeInput> {
    let span = start..start + len;
    let seps: Vec<Vec<f64>> = separated.iter().map(|s| s[span.clone()].to_vec()).collect();
    let masks = separator_masks(&ex.reference()[span.clone()], &seps, kernel, bf, ex.mixture.sample_rate())?;
    Ok(VmeInput {
        r: ex.r().into_iter().map(|c| c[span.clone()].to_vec()).collect(),
        v: ex.v()[span.clone()].to_vec(),
        x: ex.images.iter().map(|c| c[span.clone()].to_vec()).collect(),
        masks,
    })
}

/// Graph nodes of the multi-task objective.
#[derive(Debug, Clone)]
pub struct VmeObjective {
    pub total: Var,
    pub l_vm: Var,
    pub l_bf: Var,
    pub v_hat: Var,
    pub permutation: Vec<usize>,
}

/// `α·L_VM(v, v̂) + (1 − α)·L_BF` where the BF branch beamforms the
/// augmented array `[r₀, v̂, r₁]` with the given masks.
pub fn vme_objective(
    g: &mut Graph,
    vme: &VmeModel,
    p: &[Var],
    input: &VmeInput,
    kernel: &Arc<StftKernel>,
    bf: &BfConfig,
    mtl: &MtlConfig,
) -> Result<VmeObjective> {
    let t = input.v.len();
    let r = g.constant(Tensor::new(vec![2, t], input.r.concat())?);
    let v_hat = vme.forward(g, p, r)?;
    let r0 = g.rows(r, 0, 1)?;
    let r1 = g.rows(r, 1, 1)?;
    let y_bar = g.concat_rows(&[r0, v_hat, r1])?;
    let masks = g.constant(Tensor::new(
        vec![input.masks.sources(), input.masks.frames(), input.masks.bins()],
        input.masks.values().to_vec(),
    )?);
    let (x_bf, _) = g.mask_bf(y_bar, masks, kernel, bf)?;
    let ests: Vec<Var> = (0..input.x.len()).map(|i| g.rows(x_bf, i, 1)).collect::<Result<_>>()?;
    let refs: Vec<Var> = input.x.iter().map(|x| row(g, x)).collect();
    let (l_bf, permutation) = g.pit_snr_loss(&refs, &ests, mtl.snr_epsilon, mtl.loss_floor_db)?;
    let v = row(g, &input.v);
    let l_vm = g.snr_loss(v, v_hat, mtl.snr_epsilon, mtl.loss_floor_db)?;
    let total = g.mtl_loss(mtl, l_vm, l_bf)?;
    Ok(VmeObjective {
        total,
        l_vm,
        l_bf,
        v_hat,
        permutation,
    })
}

/// Separator outputs for every example, on whole utterances.
pub fn separate_all(sep: &Separator, examples: &[Example]) -> Result<Vec<Vec<Vec<f64>>>> {
    examples.par_iter().map(|ex| sep.infer(ex.reference())).collect()
}

/// Dev losses `(L_MTL, L_VM, L_BF)` of an NN-VME on whole utterances.
pub fn vme_dev_losses(
    vme: &VmeModel,
    dev: &[Example],
    separated: &[Vec<Vec<f64>>],
    kernel: &StftKernel,
    bf: &BfConfig,
    mtl: &MtlConfig,
) -> Result<(f64, f64, f64)> {
    let per = dev
        .par_iter()
        .zip(separated)
        .map(|(ex, seps)| {
            let masks = separator_masks(ex.reference(), seps, kernel, bf, ex.mixture.sample_rate())?;
            let r = MultichannelWave::from_channels(ex.r(), ex.mixture.sample_rate())?;
            let v_hat = MultichannelWave::mono(vme.infer(&ex.r())?, ex.mixture.sample_rate())?;
            let aug = AugmentedArray::with_virtual(&r, &v_hat)?;
            let (x_bf, _) = beamform(&aug.wave, &masks, bf)?;
            let est: Vec<Vec<f64>> = (0..x_bf.channels()).map(|c| x_bf.channel(c).to_vec()).collect();
            let l_vm = snr_loss_with(ex.v(), v_hat.channel(0), mtl.snr_epsilon, mtl.loss_floor_db)?;
            let l_bf = pit_bf_loss(&ex.images, &est)?.0;
            Ok((l_vm, l_bf))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    let l_vm = per.iter().map(|p| p.0).sum::<f64>() / n;
    let l_bf = per.iter().map(|p| p.1).sum::<f64>() / n;
    Ok((mtl_value(mtl.alpha, l_vm, l_bf)?, l_vm, l_bf))
}

/// Fresh NN-VME checkpoint. The initial weights do not depend on α.
pub fn new_vme(cfg: &Config, alpha: f64) -> Result<Checkpoint> {
    cfg.mtl(alpha)?;
    let vme = VmeModel::new(cfg.model.vme, init_seed(cfg.seed, Stage::Vme))?;
    let adam = AdamState::new(&vme.net.params.tensors, cfg.train.vme.learning_rate, cfg.train.vme.clip_norm);
    Ok(Checkpoint::new(Stage::Vme, cfg.seed, Some(alpha), vme.net, adam))
}

/// Frozen-separator context shared by every α.
pub struct VmeData<'a> {
    pub train: &'a [Example],
    pub train_separated: Vec<Vec<Vec<f64>>>,
    pub dev: &'a [Example],
    pub dev_separated: Vec<Vec<Vec<f64>>>,
}

impl<'a> VmeData<'a> {
    pub fn new(cfg: &Config, separator: &Separator, train: &'a [Example], dev: &'a [Example]) -> Result<Self> {
        let dev = dev_subset(dev, cfg.train.vme.dev_limit);
        Ok(Self {
            train_separated: separate_all(separator, train)?,
            dev_separated: separate_all(separator, dev)?,
            train,
            dev,
        })
    }
}

/// Trains the NN-VME under `L_MTL` with weight `alpha`.
pub fn train_vme(
    cfg: &Config,
    alpha: f64,
    data: &VmeData<'_>,
    resume: Option<Checkpoint>,
    hooks: &mut Hooks<'_>,
) -> Result<Checkpoint> {
    let mtl = cfg.mtl(alpha)?;
    let ck = match resume {
        Some(c) => {
            if c.alpha != Some(alpha) {
                return Err(Error::Config(format!("checkpoint was trained with α = {:?}, not {alpha}", c.alpha)));
            }
            c
        }
        None => new_vme(cfg, alpha)?,
    };
    let bf = cfg.model.beamformer;
    let kernel = Arc::new(StftKernel::new(bf.stft)?);
    let sc = &cfg.train.vme;
    let lens: Vec<usize> = data.train.iter().map(Example::len).collect();
    let crop = crop_len(sc, cfg.data.sample_rate, lens.iter().copied().min().unwrap_or(0));
    run_stage(
        ck,
        sc,
        &lens,
        crop,
        hooks,
        |net, g, p, it| {
            let ex = &data.train[it.example];
            let input = vme_input(ex, &data.train_separated[it.example], it.start, crop, &kernel, &bf)?;
            let vme = VmeModel::from_net(net.clone())?;
            let obj = vme_objective(g, &vme, p, &input, &kernel, &bf, &mtl)?;
            let stats = [g.value(obj.total).item(), g.value(obj.l_vm).item(), g.value(obj.l_bf).item()];
            Ok((obj.total, stats))
        },
        |net| {
            let vme = VmeModel::from_net(net.clone())?;
            let (t, vm, b) = vme_dev_losses(&vme, data.dev, &data.dev_separated, &kernel, &bf, &mtl)?;
            Ok((t, Some(vm), Some(b)))
        },
        |e, [t, vm, b]| {
            e.train_loss = Some(t);
            e.train_vm = Some(vm);
            e.train_bf = Some(b);
        },
    )
}
