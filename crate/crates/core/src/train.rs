//! Focal loss, the learning-rate schedule and the training loop.
//!
//! Batches run per-sample forward/backward passes in parallel; gradients
//! and batch-norm statistics are folded together in sample order, so a run
//! is bit-identical regardless of thread count.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::checkpoint;
use crate::config::LrDecayMode;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::layers::{BnObservation, Forward, Mode};
use crate::metrics;
use crate::network::Network;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{NodeId, Tape, Tensor};

/// Probabilities are clamped into [CLAMP, 1 - CLAMP] before the log.
pub const CLAMP: f64 = 1e-7;

/// Mean over pixels of -alpha_t * (1 - p_t)^gamma * log(p_t), with
/// p_t = pred where target = 1 and 1 - pred otherwise, and
/// alpha_t = alpha where target = 1 and 1 - alpha otherwise.
pub fn focal_loss(
    tape: &mut Tape,
    pred: NodeId,
    target: &Tensor,
    gamma: f64,
    alpha: f64,
) -> Result<NodeId> {
    let d = tape.dims(pred);
    if target.dims() != d {
        return Err(Error::Shape(format!("focal loss: pred {d} vs target {}", target.dims())));
    }
    if !target.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        return Err(Error::Data("focal loss: target must be strictly binary".into()));
    }
    // p_t = pred*(2t-1) + (1-t), alpha_t = alpha*t + (1-alpha)*(1-t).
    let sign = Tensor::new(d, target.data().iter().map(|&t| 2.0 * t - 1.0).collect())?;
    let offset = Tensor::new(d, target.data().iter().map(|&t| 1.0 - t).collect())?;
    let alpha_t = Tensor::new(
        d,
        target.data().iter().map(|&t| alpha * t + (1.0 - alpha) * (1.0 - t)).collect(),
    )?;
    let sign = tape.constant(sign);
    let offset = tape.constant(offset);
    let alpha_t = tape.constant(alpha_t);

    let pt = tape.mul(pred, sign)?;
    let pt = tape.add(pt, offset)?;
    let pt = tape.clamp(pt, CLAMP, 1.0 - CLAMP);

    let neg_pt = tape.scale(pt, -1.0);
    let one_minus = tape.add_scalar(neg_pt, 1.0);
    let focus = tape.pow_const(one_minus, gamma);
    let log_pt = tape.ln(pt);
    let weighted = tape.mul(alpha_t, focus)?;
    let per_pixel = tape.mul(weighted, log_pt)?;
    let negated = tape.scale(per_pixel, -1.0);
    tape.mean_all(negated)
}

/// Learning rate at a given epoch. The headline schedule multiplies by
/// (1 - decay) each epoch; the literal linear reading is available too.
pub fn lr_at_epoch(epoch: usize, base_lr: f64, decay: f64, mode: LrDecayMode) -> f64 {
    match mode {
        LrDecayMode::Geometric => base_lr * (1.0 - decay).powi(epoch as i32),
        LrDecayMode::Linear => (base_lr * (1.0 - decay * epoch as f64)).max(0.0),
    }
}

#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    /// Mean IoU of the (train-mode) batch predictions at threshold 0.5.
    pub train_iou: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
}

impl FitOptions {
    /// Run exactly `steps` optimizer steps: every epoch contributes at
    /// least one step, so `steps` epochs always reaches the cap.
    pub fn for_steps(steps: usize) -> FitOptions {
        FitOptions { max_steps: Some(steps), epochs: Some(steps), ..Default::default() }
    }
}

impl TrainLog {
    pub fn render(&self) -> String {
        let mut out = String::from("epoch lr loss train_iou\n");
        for e in &self.epochs {
            out.push_str(&format!("{} {} {:.12} {:.6}\n", e.epoch, e.lr, e.mean_loss, e.train_iou));
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Stop after this many optimizer steps, mid-epoch if necessary.
    pub max_steps: Option<usize>,
    /// Write a checkpoint here after training (and per epoch if asked).
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_every_epoch: bool,
    /// Override the configured epoch count.
    pub epochs: Option<usize>,
}

struct SampleResult {
    loss: f64,
    iou: f64,
    grads: Vec<(String, Vec<f64>)>,
    bn: Vec<BnObservation>,
}

fn forward_backward(net: &Network, store: &ParamStore, sample: &Sample) -> Result<SampleResult> {
    let cfg = &net.config;
    let mut tape = Tape::new();
    let mut ctx = Forward::new(&mut tape, store, Mode::Train);
    let inputs: Vec<NodeId> = cfg
        .enabled_domains
        .iter()
        .map(|&d| ctx.tape.leaf(sample.domain_tensor(d).clone(), false))
        .collect();
    let pred = net.forward(&mut ctx, &inputs)?;
    let loss = focal_loss(ctx.tape, pred, &sample.mask, cfg.focal_gamma, cfg.focal_alpha)?;
    let param_nodes = std::mem::take(&mut ctx.param_nodes);
    let bn = std::mem::take(&mut ctx.bn_observations);

    let loss_value = tape.value(loss).data()[0];
    let binary = metrics::binarize(tape.value(pred), 0.5)?;
    let iou = metrics::iou(&binary, &sample.mask)?;

    tape.backward(loss)?;
    let mut grads: Vec<(String, Vec<f64>)> = param_nodes
        .into_iter()
        .filter(|(name, _)| store.get(name).learnable)
        .map(|(name, node)| {
            let g = tape
                .grad(node)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; store.get(&name).dims.count()]);
            (name, g)
        })
        .collect();
    grads.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(SampleResult { loss: loss_value, iou, grads, bn })
}

/// Fold batch-norm statistics (averaged over the batch in sample order)
/// into the running buffers with each layer's momentum.
fn apply_bn_updates(store: &mut ParamStore, batch: &[SampleResult]) {
    if batch.is_empty() || batch[0].bn.is_empty() {
        return;
    }
    let n = batch.len() as f64;
    let layers = batch[0].bn.len();
    for layer in 0..layers {
        let proto = &batch[0].bn[layer];
        let c = proto.mean.len();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for result in batch {
            let obs = &result.bn[layer];
            debug_assert_eq!(obs.mean_name, proto.mean_name);
            for i in 0..c {
                mean[i] += obs.mean[i] / n;
                var[i] += obs.var[i] / n;
            }
        }
        let momentum = proto.momentum;
        let rm = store.buffer_mut(&proto.mean_name);
        for i in 0..c {
            rm[i] = (1.0 - momentum) * rm[i] + momentum * mean[i];
        }
        let rv = store.buffer_mut(&proto.var_name);
        for i in 0..c {
            rv[i] = (1.0 - momentum) * rv[i] + momentum * var[i];
        }
    }
}

/// Train the network. Shuffle order, batch composition and every update are
/// fixed by (config, data, seed).
pub fn fit(
    net: &Network,
    store: &mut ParamStore,
    samples: &[Sample],
    opts: &FitOptions,
) -> Result<TrainLog> {
    if samples.is_empty() {
        return Err(Error::Data("fit: empty dataset".into()));
    }
    let cfg = &net.config;
    let epochs = opts.epochs.unwrap_or(cfg.epochs);
    let mut shuffle_rng = Rng::new(cfg.seed ^ 0x5348_5546_464c_4531);
    let mut log = TrainLog::default();
    let mut steps = 0usize;

    'training: for epoch in 0..epochs {
        let lr = lr_at_epoch(epoch, cfg.adam_lr, cfg.lr_decay_per_epoch, cfg.lr_decay_mode);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut epoch_iou = 0.0;
        let mut epoch_samples = 0usize;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<SampleResult>> = chunk
                .par_iter()
                .map(|&i| forward_backward(net, store, &samples[i]))
                .collect();
            let results = results.into_iter().collect::<Result<Vec<_>>>()?;

            let batch_loss: f64 =
                results.iter().map(|r| r.loss).sum::<f64>() / results.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss in epoch {epoch}, batch {batch_index}"
                )));
            }
            let scale = 1.0 / results.len() as f64;
            for result in &results {
                for (name, g) in &result.grads {
                    store.accumulate_grad(name, g, scale);
                }
            }
            apply_bn_updates(store, &results);
            store.adam_step(lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)?;

            epoch_loss += results.iter().map(|r| r.loss).sum::<f64>();
            epoch_iou += results.iter().map(|r| r.iou).sum::<f64>();
            epoch_samples += results.len();
            steps += 1;
            if opts.max_steps.is_some_and(|limit| steps >= limit) {
                log.epochs.push(EpochLog {
                    epoch,
                    lr,
                    mean_loss: epoch_loss / epoch_samples as f64,
                    train_iou: epoch_iou / epoch_samples as f64,
                });
                break 'training;
            }
        }
        log.epochs.push(EpochLog {
            epoch,
            lr,
            mean_loss: epoch_loss / epoch_samples as f64,
            train_iou: epoch_iou / epoch_samples as f64,
        });
        if opts.checkpoint_every_epoch {
            if let Some(path) = &opts.checkpoint_path {
                checkpoint::save(path, cfg, store, epoch as u32 + 1)?;
            }
        }
    }
    log.steps = steps;

    if let Some(path) = &opts.checkpoint_path {
        checkpoint::save(path, cfg, store, log.epochs.last().map_or(0, |e| e.epoch as u32 + 1))?;
    }
    Ok(log)
}

/// Eval-mode prediction for one sample.
pub fn predict_sample(net: &Network, store: &ParamStore, sample: &Sample) -> Result<Tensor> {
    let inputs: Vec<Tensor> = net
        .config
        .enabled_domains
        .iter()
        .map(|&d| sample.domain_tensor(d).clone())
        .collect();
    net.predict(store, &inputs)
}

/// Mean eval-mode IoU against ground truth at threshold 0.5.
pub fn dataset_iou(net: &Network, store: &ParamStore, samples: &[Sample]) -> Result<f64> {
    let ious: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            let prob = predict_sample(net, store, s)?;
            let pred = metrics::binarize(&prob, 0.5)?;
            metrics::iou(&pred, &s.mask)
        })
        .collect();
    let ious = ious.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ious.iter().sum::<f64>() / ious.len().max(1) as f64)
}
