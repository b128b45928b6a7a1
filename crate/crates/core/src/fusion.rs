//! VA-DS and VA-MRFU: domain fusion and the upsampling decoder.
//!
//! VA-DS merges the per-domain feature maps by channel concatenation, gates
//! the merge with triplet attention, squeezes channels with a 1x1 conv and
//! halves the resolution. Each VA-MRFU stage doubles the resolution with a
//! 2x2/2 transposed conv, normalizes, and mixes receptive fields with a
//! three-branch dilated convolution pyramid (d = 2, 3, 4) before another
//! attention gate. A 1x1 sigmoid head turns the last stage into a per-pixel
//! splice probability map.

use crate::attention::TripletAttention;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, ConvSpec, ConvTranspose2x2, Forward};
use crate::params::ParamStore;
use crate::tensor::NodeId;

/// Merge -> attention -> squeeze -> pool (the downsampler).
pub struct VaDs {
    pub in_channels: usize,
    pub out_channels: usize,
    att: TripletAttention,
    squeeze: Conv2d,
}

impl VaDs {
    pub fn new(name: &str, in_channels: usize, out_channels: usize) -> VaDs {
        VaDs {
            in_channels,
            out_channels,
            att: TripletAttention::new(&format!("{name}.att")),
            squeeze: Conv2d::new(
                format!("{name}.squeeze"),
                ConvSpec::new(in_channels, out_channels, (1, 1)).with_bias(),
            ),
        }
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        self.att.register(store, seed)?;
        self.squeeze.register(store, seed)
    }

    pub fn attention(&self) -> &TripletAttention {
        &self.att
    }

    /// Fuse 1..=3 domain feature maps. Order is significant (channel slabs
    /// follow input order) and fixed to (rgb, edge, depth) by the caller.
    pub fn forward(&self, ctx: &mut Forward, features: &[NodeId]) -> Result<NodeId> {
        let merged = ctx.tape.concat_channels(features)?;
        if ctx.tape.dims(merged).c() != self.in_channels {
            return Err(Error::Shape(format!(
                "va_ds expects {} merged channels, got {}",
                self.in_channels,
                ctx.tape.dims(merged).c()
            )));
        }
        let gated = self.att.forward(ctx, merged)?;
        let squeezed = self.squeeze.forward(ctx, gated)?;
        ctx.tape.avg_pool2(squeezed)
    }
}

/// Three parallel 3x3 convolutions with dilations 2, 3, 4 (pad = dilation,
/// shape preserving), fused back to the stage width by a 1x1 conv.
pub struct Aspp {
    pub dilations: [usize; 3],
    branches: Vec<Conv2d>,
    fuse: Conv2d,
}

impl Aspp {
    pub fn new(name: &str, channels: usize, dilations: [usize; 3]) -> Aspp {
        let branches = dilations
            .iter()
            .map(|&d| {
                Conv2d::new(
                    format!("{name}.d{d}"),
                    ConvSpec::new(channels, channels, (3, 3)).with_dilation(d).with_padding(d),
                )
            })
            .collect();
        let fuse = Conv2d::new(
            format!("{name}.fuse"),
            ConvSpec::new(3 * channels, channels, (1, 1)).with_bias(),
        );
        Aspp { dilations, branches, fuse }
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        for b in &self.branches {
            b.register(store, seed)?;
        }
        self.fuse.register(store, seed)
    }

    pub fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        let mut outs = Vec::with_capacity(3);
        for b in &self.branches {
            outs.push(b.forward(ctx, x)?);
        }
        let cat = ctx.tape.concat_channels(&outs)?;
        self.fuse.forward(ctx, cat)
    }
}

/// One upsampling stage: TC(k=s=2) -> BN -> ReLU -> ASPP -> attention.
pub struct VaMrfu {
    pub in_channels: usize,
    pub out_channels: usize,
    tc: ConvTranspose2x2,
    bn: BatchNorm2d,
    aspp: Aspp,
    att: TripletAttention,
}

impl VaMrfu {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, dilations: [usize; 3]) -> VaMrfu {
        VaMrfu {
            in_channels,
            out_channels,
            tc: ConvTranspose2x2::new(format!("{name}.tc"), in_channels, out_channels),
            bn: BatchNorm2d::new(format!("{name}.bn"), out_channels),
            aspp: Aspp::new(&format!("{name}.aspp"), out_channels, dilations),
            att: TripletAttention::new(&format!("{name}.att")),
        }
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        self.tc.register(store, seed)?;
        self.bn.register(store)?;
        self.aspp.register(store, seed)?;
        self.att.register(store, seed)
    }

    pub fn aspp(&self) -> &Aspp {
        &self.aspp
    }

    pub fn attention(&self) -> &TripletAttention {
        &self.att
    }

    pub fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        let h = self.tc.forward(ctx, x)?;
        let h = self.bn.forward(ctx, h)?;
        let h = ctx.tape.relu(h);
        let h = self.aspp.forward(ctx, h)?;
        self.att.forward(ctx, h)
    }
}

/// 1x1 conv to a single channel plus sigmoid: the probability mask.
pub struct MaskHead {
    conv: Conv2d,
}

impl MaskHead {
    pub fn new(name: &str, in_channels: usize) -> MaskHead {
        MaskHead {
            conv: Conv2d::new(format!("{name}"), ConvSpec::new(in_channels, 1, (1, 1)).with_bias()),
        }
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        self.conv.register(store, seed)
    }

    pub fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        let logits = self.conv.forward(ctx, x)?;
        Ok(ctx.tape.sigmoid(logits))
    }
}
