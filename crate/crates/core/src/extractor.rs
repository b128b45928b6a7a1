//! VA-MDFE: the visually attentive multi-domain feature extractor.
//!
//! One instance per input domain. A truncated densely connected backbone:
//! stem (7x7/2 conv + 3x3/2 max pool), dense block, attention, transition,
//! dense block, attention. The two discarded blocks/transitions of the full
//! backbone are simply never built. Every dense layer L consumes the channel
//! concatenation of the block input and all previous layer outputs.

use crate::attention::TripletAttention;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, ConvSpec, Forward};
use crate::params::ParamStore;
use crate::tensor::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseBlockSpec {
    pub num_layers: usize,
    pub growth_rate: usize,
    /// Bottleneck width = factor * growth_rate.
    pub bottleneck_factor: usize,
}

impl DenseBlockSpec {
    pub fn output_channels(&self, in_channels: usize) -> usize {
        in_channels + self.num_layers * self.growth_rate
    }
}

/// BN -> ReLU -> 1x1 conv (bottleneck) -> BN -> ReLU -> 3x3 conv (growth).
pub struct DenseLayer {
    pub in_channels: usize,
    bn1: BatchNorm2d,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    conv2: Conv2d,
}

impl DenseLayer {
    pub fn new(name: &str, in_channels: usize, spec: &DenseBlockSpec) -> DenseLayer {
        let mid = spec.bottleneck_factor * spec.growth_rate;
        DenseLayer {
            in_channels,
            bn1: BatchNorm2d::new(format!("{name}.bn1"), in_channels),
            conv1: Conv2d::new(format!("{name}.conv1"), ConvSpec::new(in_channels, mid, (1, 1))),
            bn2: BatchNorm2d::new(format!("{name}.bn2"), mid),
            conv2: Conv2d::new(format!("{name}.conv2"), ConvSpec::new(mid, spec.growth_rate, (3, 3)).with_padding(1)),
        }
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        self.bn1.register(store)?;
        self.conv1.register(store, seed)?;
        self.bn2.register(store)?;
        self.conv2.register(store, seed)
    }

    pub fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        if ctx.tape.dims(x).c() != self.in_channels {
            return Err(Error::Shape(format!(
                "dense layer expects {} channels, got {}",
                self.in_channels,
                ctx.tape.dims(x).c()
            )));
        }
        let h = self.bn1.forward(ctx, x)?;
        let h = ctx.tape.relu(h);
        let h = self.conv1.forward(ctx, h)?;
        let h = self.bn2.forward(ctx, h)?;
        let h = ctx.tape.relu(h);
        self.conv2.forward(ctx, h)
    }
}

pub struct DenseBlock {
    pub spec: DenseBlockSpec,
    pub in_channels: usize,
    layers: Vec<DenseLayer>,
}

impl DenseBlock {
    pub fn new(name: &str, in_channels: usize, spec: DenseBlockSpec) -> DenseBlock {
        let layers = (0..spec.num_layers)
            .map(|l| DenseLayer::new(&format!("{name}.layer{l}"), in_channels + l * spec.growth_rate, &spec))
            .collect();
        DenseBlock { spec, in_channels, layers }
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        for layer in &self.layers {
            layer.register(store, seed)?;
        }
        Ok(())
    }

    /// Input width of each layer: C_in + L * g, layers indexed from 0.
    pub fn wiring_widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.in_channels).collect()
    }

    pub fn output_channels(&self) -> usize {
        self.spec.output_channels(self.in_channels)
    }

    pub fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        let mut feats = vec![x];
        for layer in &self.layers {
            let inp = ctx.tape.concat_channels(&feats)?;
            let out = layer.forward(ctx, inp)?;
            feats.push(out);
        }
        ctx.tape.concat_channels(&feats)
    }
}

/// BN -> ReLU -> 1x1 conv halving channels -> 2x2 average pool.
pub struct Transition {
    pub in_channels: usize,
    pub out_channels: usize,
    bn: BatchNorm2d,
    conv: Conv2d,
}

impl Transition {
    pub fn new(name: &str, in_channels: usize) -> Result<Transition> {
        if in_channels % 2 != 0 {
            return Err(Error::Config(format!("transition input channels {in_channels} must be even")));
        }
        let out_channels = in_channels / 2;
        Ok(Transition {
            in_channels,
            out_channels,
            bn: BatchNorm2d::new(format!("{name}.bn"), in_channels),
            conv: Conv2d::new(format!("{name}.conv"), ConvSpec::new(in_channels, out_channels, (1, 1))),
        })
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        self.bn.register(store)?;
        self.conv.register(store, seed)
    }

    pub fn forward(&self, ctx: &mut Forward, x: NodeId) -> Result<NodeId> {
        let h = self.bn.forward(ctx, x)?;
        let h = ctx.tape.relu(h);
        let h = self.conv.forward(ctx, h)?;
        ctx.tape.avg_pool2(h)
    }
}

pub struct Extractor {
    stem: Conv2d,
    block1: DenseBlock,
    att1: TripletAttention,
    transition: Transition,
    block2: DenseBlock,
    att2: TripletAttention,
}

impl Extractor {
    /// `name` prefixes every parameter, so distinct domains never share
    /// weights. `in_channels` is 3 for RGB, 1 for edge/depth.
    pub fn new(
        name: &str,
        in_channels: usize,
        stem_channels: usize,
        block: DenseBlockSpec,
    ) -> Result<Extractor> {
        let stem_spec =
            ConvSpec::new(in_channels, stem_channels, (7, 7)).with_stride(2).with_padding(3);
        let block1 = DenseBlock::new(&format!("{name}.block1"), stem_channels, block);
        let transition = Transition::new(&format!("{name}.trans"), block1.output_channels())?;
        let block2 = DenseBlock::new(&format!("{name}.block2"), transition.out_channels, block);
        Ok(Extractor {
            stem: Conv2d::new(format!("{name}.stem"), stem_spec),
            block1,
            att1: TripletAttention::new(&format!("{name}.att1")),
            transition,
            block2,
            att2: TripletAttention::new(&format!("{name}.att2")),
        })
    }

    pub fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        self.stem.register(store, seed)?;
        self.block1.register(store, seed)?;
        self.att1.register(store, seed)?;
        self.transition.register(store, seed)?;
        self.block2.register(store, seed)?;
        self.att2.register(store, seed)
    }

    pub fn in_channels(&self) -> usize {
        self.stem.spec.in_channels
    }

    pub fn output_channels(&self) -> usize {
        self.block2.output_channels()
    }

    /// Spatial reduction factor of the whole extractor (stem conv x stem
    /// pool x transition pool).
    pub const SPATIAL_FACTOR: usize = 8;

    pub fn blocks(&self) -> [&DenseBlock; 2] {
        [&self.block1, &self.block2]
    }

    pub fn transition(&self) -> &Transition {
        &self.transition
    }

    pub fn attentions(&self) -> [&TripletAttention; 2] {
        [&self.att1, &self.att2]
    }

    pub fn forward(&self, ctx: &mut Forward, image: NodeId) -> Result<NodeId> {
        let d = ctx.tape.dims(image);
        if d.c() != self.in_channels() {
            return Err(Error::Shape(format!(
                "extractor expects {} input channels, got {}",
                self.in_channels(),
                d.c()
            )));
        }
        let h = self.stem.forward(ctx, image)?;
        let h = ctx.tape.max_pool3_s2_p1(h)?;
        let h = self.block1.forward(ctx, h)?;
        let h = self.att1.forward(ctx, h)?;
        let h = self.transition.forward(ctx, h)?;
        let h = self.block2.forward(ctx, h)?;
        self.att2.forward(ctx, h)
    }
}
