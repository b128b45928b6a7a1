//! Gradient verification against central finite differences.
//!
//! The engine perturbs one coordinate at a time by ±h (h = 1e-5), evaluates
//! a scalar function twice, and compares the quotient with the analytic
//! gradient from the tape. Coordinates within `KINK_MARGIN` of a
//! non-differentiable point (relu zero crossings, pooling argmax boundaries)
//! are skipped. Errors are reported relative to the largest gradient
//! magnitude of the probed tensor, so a zero-gradient coordinate measured
//! against finite-difference noise does not drown the report.

use crate::error::Result;
use crate::rng::{mix64, Rng};
use crate::tensor::{Axis, Dims, NodeId, Tape, Tensor};

pub const STEP: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 1e-6;
/// Acceptance threshold for every op in the suite.
pub const MAX_REL_ERR: f64 = 1e-5;

/// One probed tensor: a leaf input or a named parameter.
pub struct Probe {
    pub label: String,
    pub value: Tensor,
    /// Kink mask; `true` coordinates are skipped. Empty means none.
    pub skip: Vec<bool>,
    /// Cap on probed coordinates (deterministically sampled); None = all.
    pub max_coords: Option<usize>,
}

impl Probe {
    pub fn new(label: impl Into<String>, value: Tensor) -> Probe {
        Probe { label: label.into(), value, skip: Vec::new(), max_coords: None }
    }

    pub fn with_skip(mut self, skip: Vec<bool>) -> Probe {
        self.skip = skip;
        self
    }

    pub fn with_max_coords(mut self, n: usize) -> Probe {
        self.max_coords = Some(n);
        self
    }
}

#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
    pub threshold: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

/// Core engine: compare `analytic[i]` against central differences of `eval`
/// for every sampled coordinate of every probe.
pub fn central_diff_check(
    op: &str,
    probes: &[Probe],
    analytic: &[Vec<f64>],
    eval: &mut dyn FnMut(&[Tensor]) -> f64,
    threshold: f64,
    sample_seed: u64,
) -> OpReport {
    assert_eq!(probes.len(), analytic.len());
    let mut values: Vec<Tensor> = probes.iter().map(|p| p.value.clone()).collect();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;
    let mut skipped = 0usize;

    for (pi, probe) in probes.iter().enumerate() {
        let n = probe.value.dims().count();
        let coords: Vec<usize> = match probe.max_coords {
            Some(k) if k < n => {
                let mut rng = Rng::new(mix64(sample_seed ^ pi as u64));
                let mut picked: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut picked);
                picked.truncate(k);
                picked
            }
            _ => (0..n).collect(),
        };

        let mut numeric = vec![0.0; n];
        let mut active = Vec::new();
        for &j in &coords {
            if probe.skip.get(j).copied().unwrap_or(false) {
                skipped += 1;
                continue;
            }
            let orig = values[pi].data()[j];
            values[pi].data_mut()[j] = orig + STEP;
            let up = eval(&values);
            values[pi].data_mut()[j] = orig - STEP;
            let down = eval(&values);
            values[pi].data_mut()[j] = orig;
            numeric[j] = (up - down) / (2.0 * STEP);
            active.push(j);
        }

        let scale = active
            .iter()
            .map(|&j| analytic[pi][j].abs().max(numeric[j].abs()))
            .fold(1e-6_f64, f64::max);
        for &j in &active {
            let rel = (analytic[pi][j] - numeric[j]).abs() / scale;
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }

    OpReport { op: op.to_string(), max_rel_err: max_rel, checked, skipped, threshold }
}

/// Check a tape operation. `build` must be pure: same inputs, same output.
/// Non-scalar outputs are projected to a scalar with fixed random weights so
/// every output coordinate contributes to the loss.
pub fn check_tape_op(
    op: &str,
    inputs: Vec<Probe>,
    build: &dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
    threshold: f64,
    seed: u64,
) -> Result<OpReport> {
    // One recorded pass for the analytic gradients.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|p| tape.leaf(p.value.clone(), true)).collect();
    let out = build(&mut tape, &ids)?;
    let proj = Tensor::randn(tape.dims(out), mix64(seed ^ 0x70726f6a))?;
    let pid = tape.constant(proj.clone());
    let weighted = tape.mul(out, pid)?;
    let loss = tape.sum_all(weighted);
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_default())
        .collect();

    let mut eval = |vals: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| t.leaf(v.clone(), false)).collect();
        let out = build(&mut t, &ids).expect("gradcheck eval rebuild");
        t.value(out)
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    Ok(central_diff_check(op, &inputs, &analytic, &mut eval, threshold, seed))
}

/// Check a whole module: gradients w.r.t. its input and every learnable
/// parameter it touched. `forward` must be pure given (store, input).
pub fn check_module(
    op: &str,
    store: &crate::params::ParamStore,
    input: Tensor,
    forward: &dyn Fn(&mut crate::layers::Forward, NodeId) -> Result<NodeId>,
    threshold: f64,
    seed: u64,
    max_coords: Option<usize>,
) -> Result<OpReport> {
    use crate::layers::{Forward, Mode};

    // Analytic pass.
    let mut tape = Tape::new();
    let mut ctx = Forward::new(&mut tape, store, Mode::Train);
    let xid = ctx.tape.leaf(input.clone(), true);
    let out = forward(&mut ctx, xid)?;
    let param_nodes = std::mem::take(&mut ctx.param_nodes);
    let proj = Tensor::randn(tape.dims(out), mix64(seed ^ 0x70726f6a))?;
    let pid = tape.constant(proj.clone());
    let weighted = tape.mul(out, pid)?;
    let loss = tape.sum_all(weighted);
    tape.backward(loss)?;

    let mut names: Vec<String> = param_nodes
        .iter()
        .filter(|(name, _)| store.get(name).learnable)
        .map(|(name, _)| name.clone())
        .collect();
    names.sort();

    let mut probes = vec![{
        let mut p = Probe::new("input", input);
        if let Some(k) = max_coords {
            p = p.with_max_coords(k);
        }
        p
    }];
    let mut analytic = vec![tape.grad(xid).map(|g| g.to_vec()).unwrap_or_default()];
    for name in &names {
        let node = param_nodes[name];
        let mut p = Probe::new(name.clone(), store.tensor(name));
        if let Some(k) = max_coords {
            p = p.with_max_coords(k);
        }
        probes.push(p);
        analytic.push(tape.grad(node).map(|g| g.to_vec()).unwrap_or_default());
    }

    let mut eval = |vals: &[Tensor]| -> f64 {
        let mut patched = store.clone();
        for (name, val) in names.iter().zip(&vals[1..]) {
            patched.buffer_mut(name).copy_from_slice(val.data());
        }
        let mut t = Tape::new();
        let mut ctx = Forward::new(&mut t, &patched, Mode::Train);
        let xid = ctx.tape.leaf(vals[0].clone(), false);
        let out = forward(&mut ctx, xid).expect("gradcheck eval rebuild");
        t.value(out).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    Ok(central_diff_check(op, &probes, &analytic, &mut eval, threshold, seed))
}

/// Full verification sweep: every layer operation plus one end-to-end
/// micro-model. Deterministic in `seed`. Thresholds are per-op: linear maps
/// check at 1e-10, dilated convolution at 1e-6, everything else at 1e-5.
pub fn suite(seed: u64) -> Result<Vec<OpReport>> {
    use crate::attention::TripletAttention;
    use crate::extractor::{DenseBlockSpec, DenseLayer};
    use crate::fusion::{Aspp, VaMrfu};
    use crate::layers::{Forward, Mode};
    use crate::params::ParamStore;
    use crate::train::focal_loss;

    let mut reports = Vec::new();
    let d = Dims::new(2, 3, 6, 6);
    let r = |k: u64| Tensor::randn(d, seed ^ k).expect("valid dims");

    // A small probe keeps the accumulated-sum rounding of the projection
    // well under the linear-map tolerance.
    reports.push(check_tape_op(
        "scalar_mul",
        vec![Probe::new("x", Tensor::randn(Dims::new(1, 2, 2, 2), seed ^ 1)?)],
        &|t, ids| Ok(t.scale(ids[0], -1.37)),
        1e-10,
        seed,
    )?);
    reports.push(check_tape_op(
        "add",
        vec![Probe::new("a", r(2)), Probe::new("b", r(3))],
        &|t, ids| t.add(ids[0], ids[1]),
        MAX_REL_ERR,
        seed,
    )?);
    reports.push(check_tape_op(
        "sub",
        vec![Probe::new("a", r(4)), Probe::new("b", r(5))],
        &|t, ids| t.sub(ids[0], ids[1]),
        MAX_REL_ERR,
        seed,
    )?);
    reports.push(check_tape_op(
        "mul",
        vec![Probe::new("a", r(6)), Probe::new("b", r(7))],
        &|t, ids| t.mul(ids[0], ids[1]),
        MAX_REL_ERR,
        seed,
    )?);
    let relu_in = r(8);
    let relu_skip = relu_kinks(&relu_in);
    reports.push(check_tape_op(
        "relu",
        vec![Probe::new("x", relu_in).with_skip(relu_skip)],
        &|t, ids| Ok(t.relu(ids[0])),
        MAX_REL_ERR,
        seed,
    )?);
    reports.push(check_tape_op(
        "sigmoid",
        vec![Probe::new("x", r(9))],
        &|t, ids| Ok(t.sigmoid(ids[0])),
        1e-7,
        seed,
    )?);
    reports.push(check_tape_op(
        "concat_channels",
        vec![
            Probe::new("a", Tensor::randn(Dims::new(1, 2, 4, 4), seed ^ 10)?),
            Probe::new("b", Tensor::randn(Dims::new(1, 3, 4, 4), seed ^ 11)?),
        ],
        &|t, ids| t.concat_channels(ids),
        MAX_REL_ERR,
        seed,
    )?);
    reports.push(check_tape_op(
        "mul_gate",
        vec![
            Probe::new("x", Tensor::randn(Dims::new(1, 4, 5, 5), seed ^ 12)?),
            Probe::new("gate", Tensor::randn(Dims::new(1, 1, 5, 5), seed ^ 13)?),
        ],
        &|t, ids| t.mul_gate(ids[0], ids[1]),
        MAX_REL_ERR,
        seed,
    )?);
    reports.push(check_tape_op(
        "conv2d_3x3",
        vec![
            Probe::new("x", Tensor::randn(Dims::new(2, 3, 8, 8), seed ^ 14)?),
            Probe::new("w", Tensor::randn(Dims::new(4, 3, 3, 3), seed ^ 15)?),
            Probe::new("b", Tensor::randn(Dims::new(1, 4, 1, 1), seed ^ 16)?),
        ],
        &|t, ids| t.conv2d(ids[0], ids[1], Some(ids[2]), 1, 1, 1),
        MAX_REL_ERR,
        seed,
    )?);
    reports.push(check_tape_op(
        "conv2d_dilation2",
        vec![
            Probe::new("x", Tensor::randn(Dims::new(1, 2, 8, 8), seed ^ 17)?),
            Probe::new("w", Tensor::randn(Dims::new(3, 2, 3, 3), seed ^ 18)?),
        ],
        &|t, ids| t.conv2d(ids[0], ids[1], None, 1, 2, 2),
        1e-6,
        seed,
    )?);
    reports.push(check_tape_op(
        "conv2d_7x7_stride2",
        vec![
            Probe::new("x", Tensor::randn(Dims::new(1, 2, 10, 10), seed ^ 19)?),
            Probe::new("w", Tensor::randn(Dims::new(2, 2, 7, 7), seed ^ 20)?),
        ],
        &|t, ids| t.conv2d(ids[0], ids[1], None, 2, 3, 1),
        MAX_REL_ERR,
        seed,
    )?);
    reports.push(check_tape_op(
        "conv_transpose_2x2",
        vec![
            Probe::new("x", Tensor::randn(Dims::new(1, 3, 4, 4), seed ^ 21)?),
            Probe::new("w", Tensor::randn(Dims::new(3, 2, 2, 2), seed ^ 22)?),
        ],
        &|t, ids| t.conv_transpose_2x2(ids[0], ids[1]),
        MAX_REL_ERR,
        seed,
    )?);
    reports.push(check_tape_op(
        "batch_norm_train",
        vec![
            Probe::new("x", Tensor::randn(Dims::new(2, 3, 4, 4), seed ^ 23)?),
            Probe::new("gamma", Tensor::randn(Dims::new(1, 3, 1, 1), seed ^ 24)?),
            Probe::new("beta", Tensor::randn(Dims::new(1, 3, 1, 1), seed ^ 25)?),
        ],
        &|t, ids| t.batch_norm_train(ids[0], ids[1], ids[2], 1e-5),
        MAX_REL_ERR,
        seed,
    )?);
    reports.push(check_tape_op(
        "avg_pool2",
        vec![Probe::new("x", Tensor::randn(Dims::new(1, 3, 6, 6), seed ^ 26)?)],
        &|t, ids| t.avg_pool2(ids[0]),
        MAX_REL_ERR,
        seed,
    )?);
    let mp_in = Tensor::randn(Dims::new(1, 2, 6, 6), seed ^ 27)?;
    let mp_skip = max_pool_kinks(&mp_in, 2, 2, 0);
    reports.push(check_tape_op(
        "max_pool2",
        vec![Probe::new("x", mp_in).with_skip(mp_skip)],
        &|t, ids| t.max_pool2(ids[0]),
        MAX_REL_ERR,
        seed,
    )?);
    let mp3_in = Tensor::randn(Dims::new(1, 2, 8, 8), seed ^ 28)?;
    let mp3_skip = max_pool_kinks(&mp3_in, 3, 2, 1);
    reports.push(check_tape_op(
        "max_pool3_s2_p1",
        vec![Probe::new("x", mp3_in).with_skip(mp3_skip)],
        &|t, ids| t.max_pool3_s2_p1(ids[0]),
        MAX_REL_ERR,
        seed,
    )?);
    for (name, axis) in
        [("zpool_channel", Axis::Channel), ("zpool_height", Axis::Height), ("zpool_width", Axis::Width)]
    {
        let zin = Tensor::randn(Dims::new(1, 4, 5, 5), seed ^ 29)?;
        let zskip = zpool_kinks(&zin, axis);
        reports.push(check_tape_op(
            name,
            vec![Probe::new("x", zin).with_skip(zskip)],
            &move |t, ids| t.zpool(ids[0], axis),
            MAX_REL_ERR,
            seed,
        )?);
    }
    let target = {
        let mut rng = Rng::new(mix64(seed ^ 30));
        Tensor::new(
            Dims::new(1, 1, 4, 4),
            (0..16).map(|_| rng.below(2) as f64).collect(),
        )?
    };
    let probs = {
        let mut rng = Rng::new(mix64(seed ^ 31));
        Tensor::new(Dims::new(1, 1, 4, 4), (0..16).map(|_| rng.uniform_in(0.05, 0.95)).collect())?
    };
    reports.push(check_tape_op(
        "focal_loss",
        vec![Probe::new("p", probs)],
        &move |t, ids| focal_loss(t, ids[0], &target, 2.0, 0.25),
        MAX_REL_ERR,
        seed,
    )?);

    // Composite layers, checked through their parameters and input.
    let att = TripletAttention::new("att");
    let mut store = ParamStore::new();
    att.register(&mut store, seed)?;
    reports.push(check_module(
        "triplet_attention",
        &store,
        Tensor::randn(Dims::new(1, 3, 5, 5), seed ^ 32)?,
        &|ctx, x| att.forward(ctx, x),
        MAX_REL_ERR,
        seed,
        None,
    )?);

    let spec = DenseBlockSpec { num_layers: 1, growth_rate: 2, bottleneck_factor: 2 };
    let layer = DenseLayer::new("dl", 3, &spec);
    let mut store = ParamStore::new();
    layer.register(&mut store, seed)?;
    reports.push(check_module(
        "dense_layer",
        &store,
        Tensor::randn(Dims::new(1, 3, 5, 5), seed ^ 33)?,
        &|ctx, x| layer.forward(ctx, x),
        MAX_REL_ERR,
        seed,
        None,
    )?);

    let aspp = Aspp::new("aspp", 2, [2, 3, 4]);
    let mut store = ParamStore::new();
    aspp.register(&mut store, seed)?;
    reports.push(check_module(
        "aspp",
        &store,
        Tensor::randn(Dims::new(1, 2, 9, 9), seed ^ 34)?,
        &|ctx, x| aspp.forward(ctx, x),
        MAX_REL_ERR,
        seed,
        None,
    )?);

    let stage = VaMrfu::new("up", 3, 2, [2, 3, 4]);
    let mut store = ParamStore::new();
    stage.register(&mut store, seed)?;
    reports.push(check_module(
        "va_mrfu_stage",
        &store,
        Tensor::randn(Dims::new(1, 3, 4, 4), seed ^ 35)?,
        &|ctx, x| stage.forward(ctx, x),
        MAX_REL_ERR,
        seed,
        Some(24),
    )?);

    // End-to-end micro-model: extractor -> VA-DS -> four upsampling stages
    // -> mask head -> focal loss, at 1/8 scale. Twenty parameter coordinates
    // are probed; coordinates whose perturbation flips a relu sign or a
    // pooling argmax anywhere in the network (detected by comparing kink
    // signatures of the two evaluations) are excluded as kink-adjacent.
    let micro = {
        use crate::extractor::Extractor;
        use crate::fusion::{MaskHead, VaDs};

        struct Micro {
            ext: Extractor,
            ds: VaDs,
            stages: Vec<VaMrfu>,
            head: MaskHead,
        }
        impl Micro {
            fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
                let f = self.ext.forward(ctx, x)?;
                let mut h = self.ds.forward(ctx, &[f])?;
                for s in &self.stages {
                    h = s.forward(ctx, h)?;
                }
                self.head.forward(ctx, h)
            }
        }

        let spec = DenseBlockSpec { num_layers: 1, growth_rate: 2, bottleneck_factor: 2 };
        let ext = Extractor::new("m.ext", 1, 4, spec)?;
        let ds = VaDs::new("m.ds", ext.output_channels(), 8);
        let stages = vec![
            VaMrfu::new("m.up0", 8, 4, [2, 3, 4]),
            VaMrfu::new("m.up1", 4, 4, [2, 3, 4]),
            VaMrfu::new("m.up2", 4, 4, [2, 3, 4]),
            VaMrfu::new("m.up3", 4, 4, [2, 3, 4]),
        ];
        let head = MaskHead::new("m.head", 4);
        Micro { ext, ds, stages, head }
    };
    let mut store = ParamStore::new();
    micro.ext.register(&mut store, seed)?;
    micro.ds.register(&mut store, seed)?;
    for s in &micro.stages {
        s.register(&mut store, seed)?;
    }
    micro.head.register(&mut store, seed)?;

    let side = 32usize;
    let input = Tensor::randn(Dims::new(1, 1, side, side), seed ^ 36)?;
    let mask = {
        let mut rng = Rng::new(mix64(seed ^ 37));
        Tensor::new(
            Dims::new(1, 1, side, side),
            (0..side * side).map(|_| rng.below(2) as f64).collect(),
        )?
    };

    let eval = |store: &ParamStore| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        tape.set_kink_tracking(true);
        let mut ctx = Forward::new(&mut tape, store, Mode::Train);
        let x = ctx.tape.leaf(input.clone(), false);
        let pred = micro.forward(&mut ctx, x)?;
        let loss = focal_loss(ctx.tape, pred, &mask, 2.0, 0.25)?;
        Ok((tape.value(loss).data()[0], tape.kink_signature()))
    };

    // Analytic pass.
    let grads: std::collections::HashMap<String, Vec<f64>> = {
        let mut tape = Tape::new();
        let mut ctx = Forward::new(&mut tape, &store, Mode::Train);
        let x = ctx.tape.leaf(input.clone(), false);
        let pred = micro.forward(&mut ctx, x)?;
        let loss = focal_loss(ctx.tape, pred, &mask, 2.0, 0.25)?;
        let nodes = std::mem::take(&mut ctx.param_nodes);
        tape.backward(loss)?;
        nodes
            .into_iter()
            .filter(|(name, _)| store.get(name).learnable)
            .map(|(name, id)| {
                let g = tape.grad(id).map(|g| g.to_vec()).unwrap_or_default();
                (name, g)
            })
            .collect()
    };
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();

    let mut rng = Rng::new(mix64(seed ^ 38));
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut numerics: Vec<(String, usize, f64)> = Vec::new();
    while checked < 20 && skipped < 200 {
        let name = names[rng.below(names.len())].clone();
        let coord = rng.below(store.get(&name).dims.count());
        let orig = store.get(&name).data[coord];
        let mut patched = store.clone();
        patched.buffer_mut(&name)[coord] = orig + STEP;
        let (up, sig_up) = eval(&patched)?;
        patched.buffer_mut(&name)[coord] = orig - STEP;
        let (down, sig_down) = eval(&patched)?;
        if sig_up != sig_down {
            skipped += 1;
            continue;
        }
        numerics.push((name, coord, (up - down) / (2.0 * STEP)));
        checked += 1;
    }
    let scale = numerics
        .iter()
        .map(|(n, c, num)| grads[n][*c].abs().max(num.abs()))
        .fold(1e-6_f64, f64::max);
    for (name, coord, numeric) in &numerics {
        let rel = (grads[name][*coord] - numeric).abs() / scale;
        max_rel = max_rel.max(rel);
    }
    reports.push(OpReport {
        op: "full_network_micro".to_string(),
        max_rel_err: max_rel,
        checked,
        skipped,
        threshold: MAX_REL_ERR,
    });

    Ok(reports)
}

// ── Kink masks ──────────────────────────────────────────────────────

/// Coordinates within the margin of a relu zero crossing.
pub fn relu_kinks(t: &Tensor) -> Vec<bool> {
    t.data().iter().map(|&v| v.abs() <= KINK_MARGIN).collect()
}

/// Coordinates whose perturbation could flip a max-pool argmax: anything
/// within the margin of the runner-up in some window containing it.
pub fn max_pool_kinks(t: &Tensor, k: usize, stride: usize, pad: usize) -> Vec<bool> {
    let d = t.dims();
    let (ih, iw) = (d.h(), d.w());
    let oh = (ih + 2 * pad - k) / stride + 1;
    let ow = (iw + 2 * pad - k) / stride + 1;
    let mut mask = vec![false; d.count()];
    for nc in 0..d.n() * d.c() {
        let base = nc * ih * iw;
        for h in 0..oh {
            for w in 0..ow {
                let mut vals = Vec::new();
                for r in 0..k {
                    let ihh = (h * stride + r) as isize - pad as isize;
                    if ihh < 0 || ihh >= ih as isize {
                        continue;
                    }
                    for q in 0..k {
                        let iww = (w * stride + q) as isize - pad as isize;
                        if iww < 0 || iww >= iw as isize {
                            continue;
                        }
                        let idx = base + ihh as usize * iw + iww as usize;
                        vals.push((t.data()[idx], idx));
                    }
                }
                let best = vals.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
                for &(v, idx) in &vals {
                    // Near the window max but not uniquely above it.
                    if (best - v).abs() <= KINK_MARGIN && vals.iter().any(|&(o, oi)| oi != idx && (o - v).abs() <= KINK_MARGIN)
                    {
                        mask[idx] = true;
                    }
                }
            }
        }
    }
    mask
}

/// Kink mask for the max plane of a Z-pool along `axis`.
pub fn zpool_kinks(t: &Tensor, axis: Axis) -> Vec<bool> {
    let d = t.dims();
    let (n_n, c_n, h_n, w_n) = (d.n(), d.c(), d.h(), d.w());
    let idx = |n: usize, c: usize, h: usize, w: usize| ((n * c_n + c) * h_n + h) * w_n + w;
    let mut mask = vec![false; d.count()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    match axis {
        Axis::Channel => {
            for n in 0..n_n {
                for h in 0..h_n {
                    for w in 0..w_n {
                        groups.push((0..c_n).map(|c| idx(n, c, h, w)).collect());
                    }
                }
            }
        }
        Axis::Height => {
            for n in 0..n_n {
                for c in 0..c_n {
                    for w in 0..w_n {
                        groups.push((0..h_n).map(|h| idx(n, c, h, w)).collect());
                    }
                }
            }
        }
        Axis::Width => {
            for n in 0..n_n {
                for c in 0..c_n {
                    for h in 0..h_n {
                        groups.push((0..w_n).map(|w| idx(n, c, h, w)).collect());
                    }
                }
            }
        }
    }
    for group in groups {
        if group.len() < 2 {
            continue;
        }
        let best = group.iter().map(|&i| t.data()[i]).fold(f64::NEG_INFINITY, f64::max);
        let near: Vec<usize> =
            group.iter().copied().filter(|&i| (best - t.data()[i]).abs() <= KINK_MARGIN).collect();
        if near.len() > 1 {
            for i in near {
                mask[i] = true;
            }
        }
    }
    mask
}
