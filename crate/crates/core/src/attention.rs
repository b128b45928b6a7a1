//! Triplet visual attention: the VA(.) layer used throughout the network.
//!
//! Three branches gate the input in three orientations. Two of them rotate
//! the tensor (channel<->height, channel<->width) so that a cheap 2-channel
//! spatial gate attends across channel interactions; the third is plain
//! spatial attention. Each branch is Z-pool -> 7x7 conv -> BN -> sigmoid,
//! the gated tensors are rotated back and averaged. The layer is channel
//! count agnostic and owns exactly 300 learnable scalars at kernel 7
//! (3 x (2*7*7 conv + 2 BN)).

use crate::error::Result;
use crate::layers::{BatchNorm2d, Conv2d, ConvSpec, Forward};
use crate::params::ParamStore;
use crate::tensor::{Axis, NodeId};

struct GateBranch {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl GateBranch {
    fn new(name: &str, kernel: usize) -> GateBranch {
        let spec = ConvSpec::new(2, 1, (kernel, kernel)).with_padding(kernel / 2);
        GateBranch { conv: Conv2d::new(format!("{name}.conv"), spec), bn: BatchNorm2d::new(format!("{name}.bn"), 1) }
    }

    fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        self.conv.register(store, seed)?;
        self.bn.register(store)
    }

    /// Z-pool over channels, convolve, normalize, squash to (0,1).
    fn gate(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        let z = ctx.tape.zpool(x, Axis::Channel)?;
        let logits = self.conv.forward(ctx, z)?;
        let normed = self.bn.forward(ctx, logits)?;
        Ok(ctx.tape.sigmoid(normed))
    }

    fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }
}

pub struct TripletAttention {
    rotate_h: GateBranch,
    rotate_w: GateBranch,
    spatial: GateBranch,
    /// Test hook: force every gate to 1, making the layer the identity.
    pub bypass: bool,
}

impl TripletAttention {
    pub fn new(name: &str) -> TripletAttention {
        TripletAttention::with_kernel(name, 7)
    }

    pub fn with_kernel(name: &str, kernel: usize) -> TripletAttention {
        TripletAttention {
            rotate_h: GateBranch::new(&format!("{name}.ch"), kernel),
            rotate_w: GateBranch::new(&format!("{name}.cw"), kernel),
            spatial: GateBranch::new(&format!("{name}.sp"), kernel),
            bypass: false,
        }
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        self.rotate_h.register(store, seed)?;
        self.rotate_w.register(store, seed)?;
        self.spatial.register(store, seed)
    }

    /// Exact number of learnable scalars in this layer.
    pub fn param_count(&self) -> usize {
        self.rotate_h.param_count() + self.rotate_w.param_count() + self.spatial.param_count()
    }

    pub fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        // Branch 1: rotate C<->H, gate across (C, W), rotate back.
        let xr = ctx.tape.swap_ch(x);
        let g1 = self.branch_output(ctx, &self.rotate_h, xr)?;
        let b1 = ctx.tape.swap_ch(g1);

        // Branch 2: rotate C<->W, gate across (H, C), rotate back.
        let xr = ctx.tape.swap_cw(x);
        let g2 = self.branch_output(ctx, &self.rotate_w, xr)?;
        let b2 = ctx.tape.swap_cw(g2);

        // Branch 3: plain spatial attention.
        let b3 = self.branch_output(ctx, &self.spatial, x)?;

        let sum = ctx.tape.add(b1, b2)?;
        let sum = ctx.tape.add(sum, b3)?;
        Ok(ctx.tape.scale(sum, 1.0 / 3.0))
    }

    fn branch_output(&self, ctx: &mut Forward, branch: &GateBranch, x: NodeId) -> Result<NodeId> {
        if self.bypass {
            return Ok(x);
        }
        let gate = branch.gate(ctx, x)?;
        ctx.tape.mul_gate(x, gate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::layers::Mode;
    use crate::tensor::{Dims, Tape, Tensor};

    fn setup(kernel: usize, seed: u64) -> (TripletAttention, ParamStore) {
        let att = TripletAttention::with_kernel("att", kernel);
        let mut store = ParamStore::new();
        att.register(&mut store, seed).unwrap();
        (att, store)
    }

    #[test]
    fn parameter_count_is_300() {
        let (att, store) = setup(7, 1);
        assert_eq!(att.param_count(), 300);
        assert_eq!(store.learnable_scalar_count(), 300);
    }

    #[test]
    fn parameter_count_kernel3_variant() {
        let (att, _) = setup(3, 1);
        assert_eq!(att.param_count(), 3 * (2 * 9 + 2));
    }

    #[test]
    fn stacked_layers_add_counts() {
        let a = TripletAttention::new("a");
        let b = TripletAttention::new("b");
        assert_eq!(a.param_count() + b.param_count(), 600);
    }

    #[test]
    fn output_dims_equal_input_dims() {
        let (att, store) = setup(7, 2);
        let mut tape = Tape::new();
        let mut ctx = Forward::new(&mut tape, &store, Mode::Train);
        let x = ctx.tape.leaf(Tensor::randn(Dims::new(1, 8, 16, 16), 3).unwrap(), false);
        let y = att.forward(&mut ctx, x).unwrap();
        assert_eq!(tape.dims(y), Dims::new(1, 8, 16, 16));
    }

    #[test]
    fn bypass_mode_is_identity() {
        let (mut att, store) = setup(7, 4);
        att.bypass = true;
        let t = Tensor::randn(Dims::new(2, 5, 6, 7), 5).unwrap();
        let mut tape = Tape::new();
        let mut ctx = Forward::new(&mut tape, &store, Mode::Train);
        let x = ctx.tape.leaf(t.clone(), false);
        let y = att.forward(&mut ctx, x).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gates_attenuate_magnitudes() {
        // Each branch multiplies by a sigmoid gate in (0,1), so the averaged
        // output is strictly smaller in magnitude than the input everywhere
        // the input is nonzero.
        let (att, store) = setup(7, 6);
        let t = Tensor::randn(Dims::new(1, 4, 8, 8), 7).unwrap();
        let mut tape = Tape::new();
        let mut ctx = Forward::new(&mut tape, &store, Mode::Train);
        let x = ctx.tape.leaf(t.clone(), false);
        let y = att.forward(&mut ctx, x).unwrap();
        for (o, i) in tape.value(y).data().iter().zip(t.data()) {
            assert!(o.abs() < i.abs(), "gate out of (0,1): {o} from {i}");
            assert!(o.signum() == i.signum() || *o == 0.0);
        }
    }

    #[test]
    fn gradcheck_through_full_layer() {
        let (att, store) = setup(7, 8);
        let report = gradcheck::check_module(
            "triplet_attention",
            &store,
            Tensor::randn(Dims::new(1, 3, 5, 5), 9).unwrap(),
            &|ctx, x| att.forward(ctx, x),
            gradcheck::MAX_REL_ERR,
            20,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
