//! Neural layers: dilated convolution, 2x2 transposed convolution, batch
//! normalization, pooling and Z-pool.
//!
//! Layer structs own parameter *names*; values live in a [`ParamStore`].
//! A [`Forward`] context threads the tape, the store and the train/eval mode
//! through the network, inserting each parameter on the tape once.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Dims, NodeId, Tape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by one batch-norm layer during a train-mode
/// forward pass. The training loop folds these into the running buffers.
#[derive(Clone, Debug)]
pub struct BnObservation {
    pub mean_name: String,
    pub var_name: String,
    pub momentum: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct Forward<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub mode: Mode,
    pub param_nodes: HashMap<String, NodeId>,
    pub bn_observations: Vec<BnObservation>,
}

impl<'a> Forward<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode) -> Forward<'a> {
        Forward { tape, store, mode, param_nodes: HashMap::new(), bn_observations: Vec::new() }
    }

    /// Tape node for a named parameter; created on first use, cached after.
    pub fn param(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.param_nodes.get(name) {
            return id;
        }
        let p = self.store.get(name);
        let requires_grad = self.mode == Mode::Train && p.learnable;
        let id = self.tape.leaf(self.store.tensor(name), requires_grad);
        self.param_nodes.insert(name.to_string(), id);
        id
    }
}

/// Geometry and width of one convolution.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> ConvSpec {
        ConvSpec { in_channels, out_channels, kernel, stride: 1, padding: 0, dilation: 1, bias: false }
    }

    pub fn with_stride(mut self, s: usize) -> ConvSpec {
        self.stride = s;
        self
    }

    pub fn with_padding(mut self, p: usize) -> ConvSpec {
        self.padding = p;
        self
    }

    pub fn with_dilation(mut self, d: usize) -> ConvSpec {
        self.dilation = d;
        self
    }

    pub fn with_bias(mut self) -> ConvSpec {
        self.bias = true;
        self
    }

    /// Output spatial size: floor((X + 2p - d(k-1) - 1)/s) + 1, per axis.
    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |x: usize, k: usize| -> Result<usize> {
            let span = self.dilation * (k - 1) + 1;
            let padded = x + 2 * self.padding;
            if span > padded {
                return Err(Error::Shape(format!(
                    "conv: kernel span {span} exceeds padded extent {padded}"
                )));
            }
            Ok((padded - span) / self.stride + 1)
        };
        Ok((axis(h, self.kernel.0)?, axis(w, self.kernel.1)?))
    }

    pub fn weight_dims(&self) -> Dims {
        Dims::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    pub fn param_count(&self) -> usize {
        let w = self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1;
        w + if self.bias { self.out_channels } else { 0 }
    }
}

pub struct Conv2d {
    pub spec: ConvSpec,
    name: String,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, spec: ConvSpec) -> Conv2d {
        Conv2d { spec, name: name.into() }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        let fan_in = self.spec.in_channels * self.spec.kernel.0 * self.spec.kernel.1;
        store.register_conv_weight(&self.weight_name(), self.spec.weight_dims(), fan_in, seed)?;
        if self.spec.bias {
            store.register(
                &format!("{}.b", self.name),
                Tensor::zeros(Dims::new(1, self.spec.out_channels, 1, 1)),
            )?;
        }
        Ok(())
    }

    pub fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        let w = ctx.param(&self.weight_name());
        let b = if self.spec.bias { Some(ctx.param(&format!("{}.b", self.name))) } else { None };
        ctx.tape.conv2d(x, w, b, self.spec.stride, self.spec.padding, self.spec.dilation)
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }
}

/// Transposed convolution with kernel size and stride fixed to 2; doubles
/// H and W exactly. No bias (a batch norm always follows it here).
pub struct ConvTranspose2x2 {
    pub in_channels: usize,
    pub out_channels: usize,
    name: String,
}

impl ConvTranspose2x2 {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize) -> ConvTranspose2x2 {
        ConvTranspose2x2 { in_channels, out_channels, name: name.into() }
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        // Each output pixel receives exactly one tap per input channel when
        // k = s = 2, so the effective fan-in is in_channels.
        store.register_conv_weight(
            &format!("{}.w", self.name),
            Dims::new(self.in_channels, self.out_channels, 2, 2),
            self.in_channels,
            seed,
        )
    }

    pub fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        let w = ctx.param(&format!("{}.w", self.name));
        ctx.tape.conv_transpose_2x2(x, w)
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels * 4
    }
}

/// Per-channel batch normalization with running statistics.
pub struct BatchNorm2d {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    name: String,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> BatchNorm2d {
        BatchNorm2d { channels, momentum: 0.1, eps: 1e-5, name: name.into() }
    }

    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        let d = Dims::new(1, self.channels, 1, 1);
        store.register(&format!("{}.gamma", self.name), Tensor::full(d, 1.0))?;
        store.register(&format!("{}.beta", self.name), Tensor::zeros(d))?;
        store.register_buffer(&format!("{}.running_mean", self.name), Tensor::zeros(d))?;
        store.register_buffer(&format!("{}.running_var", self.name), Tensor::full(d, 1.0))?;
        Ok(())
    }

    pub fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        let gamma = ctx.param(&format!("{}.gamma", self.name));
        let beta = ctx.param(&format!("{}.beta", self.name));
        match ctx.mode {
            Mode::Train => {
                let out = ctx.tape.batch_norm_train(x, gamma, beta, self.eps)?;
                let (mean, var) = ctx.tape.bn_batch_stats(out).expect("train-mode bn node");
                ctx.bn_observations.push(BnObservation {
                    mean_name: format!("{}.running_mean", self.name),
                    var_name: format!("{}.running_var", self.name),
                    momentum: self.momentum,
                    mean: mean.to_vec(),
                    var: var.to_vec(),
                });
                Ok(out)
            }
            Mode::Eval => {
                let mean = ctx.store.buffer(&format!("{}.running_mean", self.name)).to_vec();
                let var = ctx.store.buffer(&format!("{}.running_var", self.name)).to_vec();
                ctx.tape.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Axis;

    fn leaf(tape: &mut Tape, dims: Dims, data: Vec<f64>, grad: bool) -> NodeId {
        tape.leaf(Tensor::new(dims, data).unwrap(), grad)
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(Dims::new(1, 1, 5, 5), 1).unwrap(), false);
        let w = leaf(&mut tape, Dims::new(1, 1, 1, 1), vec![1.0], false);
        let y = tape.conv2d(x, w, None, 1, 0, 1).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv_zero_weights_gives_bias() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(Dims::new(1, 2, 4, 4), 2).unwrap(), false);
        let w = tape.leaf(Tensor::zeros(Dims::new(3, 2, 3, 3)), false);
        let b = leaf(&mut tape, Dims::new(1, 3, 1, 1), vec![0.5, -1.0, 2.0], false);
        let y = tape.conv2d(x, w, Some(b), 1, 1, 1).unwrap();
        let yd = tape.value(y);
        for c in 0..3 {
            for h in 0..4 {
                for w_ in 0..4 {
                    assert_eq!(yd.at(0, c, h, w_), [0.5, -1.0, 2.0][c]);
                }
            }
        }
    }

    #[test]
    fn conv_dilated_impulse_response() {
        // Unit impulse at the center of a 9x9 input; 3x3 kernel with
        // dilation 4 and pad 4 must respond exactly at offsets {-4,0,4}^2.
        let n = 9;
        let mut data = vec![0.0; n * n];
        data[4 * n + 4] = 1.0;
        let mut tape = Tape::new();
        let x = leaf(&mut tape, Dims::new(1, 1, n, n), data, false);
        let w = leaf(&mut tape, Dims::new(1, 1, 3, 3), vec![1.0; 9], false);
        let y = tape.conv2d(x, w, None, 1, 4, 4).unwrap();
        assert_eq!(tape.dims(y), Dims::new(1, 1, n, n));
        let yd = tape.value(y);
        let mut support = 0;
        for h in 0..n {
            for ww in 0..n {
                let v = yd.at(0, 0, h, ww);
                let expected = (h as isize - 4).abs() % 4 == 0
                    && (ww as isize - 4).abs() % 4 == 0
                    && (h as isize - 4).abs() <= 4
                    && (ww as isize - 4).abs() <= 4;
                if expected {
                    assert_eq!(v, 1.0, "tap missing at ({h},{ww})");
                    support += 1;
                } else {
                    assert_eq!(v, 0.0, "stray tap at ({h},{ww})");
                }
            }
        }
        assert_eq!(support, 9);
    }

    #[test]
    fn conv_impulse_support_spans_2d_plus_1() {
        // For a 3x3 kernel with dilation d and pad d, the response of a
        // centered impulse spans exactly (2d+1) x (2d+1).
        for d in [2usize, 3, 4] {
            let n = 2 * d + 3;
            let mid = n / 2;
            let mut data = vec![0.0; n * n];
            data[mid * n + mid] = 1.0;
            let mut tape = Tape::new();
            let x = leaf(&mut tape, Dims::new(1, 1, n, n), data, false);
            let w = leaf(&mut tape, Dims::new(1, 1, 3, 3), vec![1.0; 9], false);
            let y = tape.conv2d(x, w, None, 1, d, d).unwrap();
            let yd = tape.value(y);
            let (mut min_h, mut max_h, mut min_w, mut max_w) = (n, 0, n, 0);
            for h in 0..n {
                for ww in 0..n {
                    if yd.at(0, 0, h, ww) != 0.0 {
                        min_h = min_h.min(h);
                        max_h = max_h.max(h);
                        min_w = min_w.min(ww);
                        max_w = max_w.max(ww);
                    }
                }
            }
            assert_eq!(max_h - min_h + 1, 2 * d + 1);
            assert_eq!(max_w - min_w + 1, 2 * d + 1);
        }
    }

    #[test]
    fn conv_channel_mismatch_is_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Dims::new(1, 2, 4, 4)), false);
        let w = tape.leaf(Tensor::zeros(Dims::new(1, 3, 3, 3)), false);
        assert!(tape.conv2d(x, w, None, 1, 1, 1).is_err());
    }

    #[test]
    fn conv_kernel_too_large_is_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Dims::new(1, 1, 2, 2)), false);
        let w = tape.leaf(Tensor::zeros(Dims::new(1, 1, 5, 5)), false);
        assert!(tape.conv2d(x, w, None, 1, 0, 1).is_err());
    }

    #[test]
    fn transposed_conv_doubles_spatial() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(Dims::new(1, 3, 8, 8), 4).unwrap(), false);
        let w = tape.leaf(Tensor::randn(Dims::new(3, 5, 2, 2), 5).unwrap(), false);
        let y = tape.conv_transpose_2x2(x, w).unwrap();
        assert_eq!(tape.dims(y), Dims::new(1, 5, 16, 16));
    }

    #[test]
    fn transposed_conv_ones_in_ones_out() {
        // With k = s = 2 each output pixel receives exactly one contribution.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(Dims::new(1, 1, 3, 3), 1.0), false);
        let w = tape.leaf(Tensor::full(Dims::new(1, 1, 2, 2), 1.0), false);
        let y = tape.conv_transpose_2x2(x, w).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn transposed_conv_adjoint_identity() {
        // <TC_w(x), y> == <x, conv_w(y, stride 2)>: the same weight tensor
        // read as [out_c, in_c, 2, 2] is the adjoint's kernel.
        let x = Tensor::randn(Dims::new(1, 3, 4, 4), 11).unwrap();
        let w = Tensor::randn(Dims::new(3, 2, 2, 2), 12).unwrap();
        let y = Tensor::randn(Dims::new(1, 2, 8, 8), 13).unwrap();

        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone(), false);
        let wn = tape.leaf(w.clone(), false);
        let yn = tape.leaf(y.clone(), false);
        let up = tape.conv_transpose_2x2(xn, wn).unwrap();
        let lhs: f64 = tape.value(up).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let down = tape.conv2d(yn, wn, None, 2, 0, 1).unwrap();
        let rhs: f64 = tape.value(down).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
        assert!(rel < 1e-10, "adjoint mismatch: {lhs} vs {rhs}");
    }

    #[test]
    fn transposed_conv_bad_weight_dims() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Dims::new(1, 3, 4, 4)), false);
        let w = tape.leaf(Tensor::zeros(Dims::new(2, 2, 2, 2)), false);
        assert!(tape.conv_transpose_2x2(x, w).is_err());
        let w3 = tape.leaf(Tensor::zeros(Dims::new(3, 2, 3, 3)), false);
        assert!(tape.conv_transpose_2x2(x, w3).is_err());
    }

    #[test]
    fn batch_norm_train_normalizes() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(Dims::new(2, 3, 4, 4), 21).unwrap(), false);
        let gamma = tape.leaf(Tensor::full(Dims::new(1, 3, 1, 1), 1.0), false);
        let beta = tape.leaf(Tensor::zeros(Dims::new(1, 3, 1, 1)), false);
        let y = tape.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
        let yd = tape.value(y);
        for c in 0..3 {
            let mut vals = Vec::new();
            for n in 0..2 {
                for h in 0..4 {
                    for w in 0..4 {
                        vals.push(yd.at(n, c, h, w));
                    }
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-8, "mean {m}");
            // eps shrinks the normalized variance slightly below 1.
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
    }

    #[test]
    fn batch_norm_constant_channel_is_beta() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(Dims::new(1, 1, 4, 4), 7.5), false);
        let gamma = tape.leaf(Tensor::full(Dims::new(1, 1, 1, 1), 1.0), false);
        let beta = tape.leaf(Tensor::full(Dims::new(1, 1, 1, 1), 0.25), false);
        let y = tape.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_eval_is_affine_and_batch_independent() {
        let store_bn = BatchNorm2d::new("bn", 2);
        let mut store = ParamStore::new();
        store_bn.register(&mut store).unwrap();
        store.buffer_mut("bn.running_mean").copy_from_slice(&[0.5, -0.5]);
        store.buffer_mut("bn.running_var").copy_from_slice(&[4.0, 1.0]);

        let x1 = Tensor::randn(Dims::new(1, 2, 2, 2), 31).unwrap();
        let single = {
            let mut tape = Tape::new();
            let mut ctx = Forward::new(&mut tape, &store, Mode::Eval);
            let x = ctx.tape.leaf(x1.clone(), false);
            let y = store_bn.forward(&mut ctx, x).unwrap();
            tape.value(y).data().to_vec()
        };
        // Same element inside a larger batch maps identically.
        let mut batch_data = x1.data().to_vec();
        batch_data.extend(Tensor::randn(Dims::new(1, 2, 2, 2), 32).unwrap().data());
        let batched = {
            let mut tape = Tape::new();
            let mut ctx = Forward::new(&mut tape, &store, Mode::Eval);
            let x = ctx.tape.leaf(Tensor::new(Dims::new(2, 2, 2, 2), batch_data).unwrap(), false);
            let y = store_bn.forward(&mut ctx, x).unwrap();
            tape.value(y).data()[..8].to_vec()
        };
        assert_eq!(single, batched);
    }

    #[test]
    fn batch_norm_zero_extent_is_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Dims::new(1, 2, 0, 4)), false);
        let gamma = tape.leaf(Tensor::full(Dims::new(1, 2, 1, 1), 1.0), false);
        let beta = tape.leaf(Tensor::zeros(Dims::new(1, 2, 1, 1)), false);
        assert!(tape.batch_norm_train(x, gamma, beta, 1e-5).is_err());
    }

    #[test]
    fn pool_window_arithmetic() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, Dims::new(1, 1, 2, 2), vec![1.0, 3.0, 2.0, 4.0], false);
        let avg = tape.avg_pool2(x).unwrap();
        assert_eq!(tape.value(avg).data(), &[2.5]);
        let max = tape.max_pool2(x).unwrap();
        assert_eq!(tape.value(max).data(), &[4.0]);
    }

    #[test]
    fn pool_constant_invariance() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(Dims::new(1, 2, 4, 4), 1.25), false);
        let avg = tape.avg_pool2(x).unwrap();
        let max = tape.max_pool2(x).unwrap();
        assert!(tape.value(avg).data().iter().all(|&v| v == 1.25));
        assert!(tape.value(max).data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn pool_odd_extent_is_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Dims::new(1, 1, 3, 4)), false);
        assert!(tape.avg_pool2(x).is_err());
        assert!(tape.max_pool2(x).is_err());
    }

    #[test]
    fn max_pool_tie_breaks_to_first() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(Dims::new(1, 1, 2, 2), 3.0), true);
        let y = tape.max_pool2(x).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stem_pool_halves_128() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Dims::new(1, 1, 128, 128)), false);
        let y = tape.max_pool3_s2_p1(x).unwrap();
        assert_eq!(tape.dims(y), Dims::new(1, 1, 64, 64));
    }

    #[test]
    fn zpool_channel_max_and_mean() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, Dims::new(1, 2, 1, 1), vec![1.0, 3.0], false);
        let y = tape.zpool(x, Axis::Channel).unwrap();
        assert_eq!(tape.dims(y), Dims::new(1, 2, 1, 1));
        assert_eq!(tape.value(y).data(), &[3.0, 2.0]);
    }

    #[test]
    fn zpool_single_channel_planes_match() {
        let t = Tensor::randn(Dims::new(1, 1, 3, 3), 41).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone(), false);
        let y = tape.zpool(x, Axis::Channel).unwrap();
        let yd = tape.value(y).data();
        assert_eq!(&yd[..9], t.data());
        assert_eq!(&yd[9..], t.data());
    }

    #[test]
    fn zpool_axis_variants() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(Dims::new(2, 3, 4, 5), 42).unwrap(), false);
        let h = tape.zpool(x, Axis::Height).unwrap();
        assert_eq!(tape.dims(h), Dims::new(2, 3, 2, 5));
        let w = tape.zpool(x, Axis::Width).unwrap();
        assert_eq!(tape.dims(w), Dims::new(2, 3, 4, 2));
    }

    #[test]
    fn zpool_invariant_under_channel_permutation() {
        use crate::rng::Rng;
        let mut rng = Rng::new(77);
        for trial in 0..20 {
            let dims = Dims::new(1, 5, 3, 3);
            let t = Tensor::randn(dims, 1000 + trial).unwrap();
            let mut perm: Vec<usize> = (0..5).collect();
            rng.shuffle(&mut perm);
            let mut permuted = vec![0.0; t.data().len()];
            for (dst_c, &src_c) in perm.iter().enumerate() {
                permuted[dst_c * 9..(dst_c + 1) * 9].copy_from_slice(&t.data()[src_c * 9..(src_c + 1) * 9]);
            }
            let mut tape = Tape::new();
            let a = tape.leaf(t, false);
            let b = tape.leaf(Tensor::new(dims, permuted).unwrap(), false);
            let za = tape.zpool(a, Axis::Channel).unwrap();
            let zb = tape.zpool(b, Axis::Channel).unwrap();
            let (da, db) = (tape.value(za).data(), tape.value(zb).data());
            // Max plane is exactly invariant; the mean plane reassociates
            // the channel sum, so allow rounding noise there.
            assert_eq!(&da[..9], &db[..9]);
            for (x, y) in da[9..].iter().zip(&db[9..]) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn conv_layer_registers_and_runs() {
        let spec = ConvSpec::new(3, 8, (3, 3)).with_padding(1).with_bias();
        let conv = Conv2d::new("t.conv", spec);
        let mut store = ParamStore::new();
        conv.register(&mut store, 5).unwrap();
        assert_eq!(conv.param_count(), 8 * 3 * 9 + 8);

        let mut tape = Tape::new();
        let mut ctx = Forward::new(&mut tape, &store, Mode::Train);
        let x = ctx.tape.leaf(Tensor::randn(Dims::new(1, 3, 8, 8), 6).unwrap(), false);
        let y = conv.forward(&mut ctx, x).unwrap();
        assert_eq!(tape.dims(y), Dims::new(1, 8, 8, 8));
    }
}
