//! DenseNet encoder: image → annotation grid.
//!
//! Layout: a 3×3 stem convolution to `initial_channels`, then `num_blocks`
//! rounds of 2×2/stride-2 pooling followed by a dense block. Inside a block,
//! every (bottleneck, 3×3) pair reads the depth-concatenation of the block
//! input and all earlier pair outputs, and each convolution is preceded by
//! batchnorm → ReLU → dropout. There is no channel compression between blocks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{self, Binder};
use crate::tensor::{
    BatchStats, BufferId, LayerKind, Mode, Padding, ParamId, ParamStore, PoolMode, RunningStats,
    Tape, Tensor, Var,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub num_blocks: usize,
    /// Sub-layers per dense block; alternating 1×1 bottleneck and 3×3 conv.
    pub sublayers_per_block: usize,
    /// Channels added by each 3×3 sub-layer.
    pub growth_rate: usize,
    /// Output channels of each 1×1 bottleneck.
    pub bottleneck_width: usize,
    pub initial_channels: usize,
    pub dropout_ratio: f64,
    pub pool_mode: PoolMode,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl EncoderConfig {
    /// Full-scale preset: 3 blocks of 32 sub-layers landing on d = 684.
    pub fn full() -> Self {
        EncoderConfig {
            num_blocks: 3,
            sublayers_per_block: 32,
            growth_rate: 12,
            bottleneck_width: 48,
            initial_channels: 108,
            dropout_ratio: 0.2,
            pool_mode: PoolMode::Max,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Desk-scale preset (d = 22).
    pub fn toy() -> Self {
        EncoderConfig {
            num_blocks: 3,
            sublayers_per_block: 4,
            growth_rate: 3,
            bottleneck_width: 8,
            initial_channels: 4,
            dropout_ratio: 0.2,
            pool_mode: PoolMode::Max,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn pairs_per_block(&self) -> usize {
        self.sublayers_per_block / 2
    }

    /// Channels entering block `b` (0-based).
    pub fn block_input_channels(&self, b: usize) -> usize {
        self.initial_channels + b * self.pairs_per_block() * self.growth_rate
    }

    /// Annotation dimension `d`.
    pub fn output_channels(&self) -> usize {
        self.block_input_channels(self.num_blocks)
    }

    /// Smallest input extent that survives all pooling stages.
    pub fn min_extent(&self) -> usize {
        1 << self.num_blocks
    }

    /// Grid extents `(h, w)` for an `H × W` input: one floor-halving per block.
    pub fn grid_extents(&self, height: usize, width: usize) -> (usize, usize) {
        (height >> self.num_blocks, width >> self.num_blocks)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_blocks", self.num_blocks),
            ("sublayers_per_block", self.sublayers_per_block),
            ("growth_rate", self.growth_rate),
            ("bottleneck_width", self.bottleneck_width),
            ("initial_channels", self.initial_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be positive")));
        }
        if !self.sublayers_per_block.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "sublayers_per_block must be even, got {}",
                self.sublayers_per_block
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_ratio) {
            return Err(Error::Config(format!(
                "dropout ratio {} outside [0, 1)",
                self.dropout_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct NormLayer {
    scale: ParamId,
    shift: ParamId,
    mean: BufferId,
    var: BufferId,
}

#[derive(Debug, Clone)]
struct DensePair {
    norm_in: NormLayer,
    bottleneck: ParamId,
    norm_mid: NormLayer,
    conv: ParamId,
}

/// Batch statistics observed by one batchnorm layer in train mode.
#[derive(Debug, Clone)]
pub struct NormUpdate {
    mean: BufferId,
    var: BufferId,
    stats: BatchStats,
}

/// Encoder output on a tape: `[h, w, d]`, or `[n, h, w, d]` for a batch.
#[derive(Debug, Clone)]
pub struct EncodedFeatures {
    pub features: Var,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub norm_updates: Vec<NormUpdate>,
}

/// Owned annotation grid: `L = h·w` annotation vectors of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationGrid {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub vectors: Tensor,
}

impl AnnotationGrid {
    pub fn new(vectors: Tensor) -> Result<Self> {
        let &[h, w, d] = vectors.shape() else {
            return Err(Error::shape(
                "annotation grid",
                format!("expected [h, w, d], got {:?}", vectors.shape()),
            ));
        };
        Ok(AnnotationGrid { h, w, d, vectors })
    }

    /// Number of regions `L`.
    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Annotation vector of region `l` (row-major over the grid).
    pub fn vector(&self, l: usize) -> &[f64] {
        &self.vectors.data()[l * self.d..(l + 1) * self.d]
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    stem: ParamId,
    blocks: Vec<Vec<DensePair>>,
}

impl Encoder {
    /// Registers freshly initialized encoder parameters under `encoder.*`.
    pub fn new<R: Rng>(config: EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        Self::build(config, store, Binder::Init(rng))
    }

    /// Binds to parameters already present in `store` (e.g. after loading a checkpoint).
    pub fn from_store(config: EncoderConfig, store: &mut ParamStore) -> Result<Self> {
        Self::build(config, store, Binder::Lookup)
    }

    fn build(config: EncoderConfig, store: &mut ParamStore, mut bind: Binder<'_>) -> Result<Self> {
        config.validate()?;
        let conv = LayerKind::Convolutional;
        let stem_shape = [3, 3, 1, config.initial_channels];
        let stem = bind.param(store, "encoder.stem", conv, |r| init::he_conv(&stem_shape, r))?;
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for b in 0..config.num_blocks {
            let mut pairs = Vec::with_capacity(config.pairs_per_block());
            for p in 0..config.pairs_per_block() {
                let prefix = format!("encoder.block{b}.pair{p}");
                let cin = config.block_input_channels(b) + p * config.growth_rate;
                let bw = config.bottleneck_width;
                let norm_in = norm_layer(store, &format!("{prefix}.norm_in"), cin, &mut bind)?;
                let bshape = [1, 1, cin, bw];
                let bottleneck = bind.param(store, &format!("{prefix}.bottleneck"), conv, |r| {
                    init::he_conv(&bshape, r)
                })?;
                let norm_mid = norm_layer(store, &format!("{prefix}.norm_mid"), bw, &mut bind)?;
                let cshape = [3, 3, bw, config.growth_rate];
                let conv_id = bind.param(store, &format!("{prefix}.conv"), conv, |r| {
                    init::he_conv(&cshape, r)
                })?;
                pairs.push(DensePair {
                    norm_in,
                    bottleneck,
                    norm_mid,
                    conv: conv_id,
                });
            }
            blocks.push(pairs);
        }
        Ok(Encoder {
            config,
            stem,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Runs the encoder on `[H, W, 1]` or `[n, H, W, 1]` input.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &Tape,
        store: &ParamStore,
        image: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<EncodedFeatures> {
        let shape = tape.shape(image);
        let (height, width) = match shape.as_slice() {
            [h, w, 1] | [_, h, w, 1] => (*h, *w),
            other => {
                return Err(Error::shape(
                    "encode",
                    format!("expected a single-channel image, got {other:?}"),
                ))
            }
        };
        let min = self.config.min_extent();
        if height < min || width < min {
            return Err(Error::InvalidArgument(format!(
                "image {height}x{width} smaller than the pooling budget {min}x{min}"
            )));
        }
        let stem = tape.param(store, self.stem);
        let mut x = tape.conv2d(image, stem, (1, 1), Padding::Same)?;
        let mut updates = Vec::new();
        for b in 0..self.config.num_blocks {
            x = tape.pool2d(x, self.config.pool_mode)?;
            x = self.dense_block(tape, store, x, b, mode, rng, &mut updates)?;
        }
        let out = tape.shape(x);
        let (h, w, d) = match out.as_slice() {
            [h, w, d] | [_, h, w, d] => (*h, *w, *d),
            _ => unreachable!(),
        };
        Ok(EncodedFeatures {
            features: x,
            h,
            w,
            d,
            norm_updates: updates,
        })
    }

    /// One dense block; output depth is input depth + pairs · growth_rate.
    #[allow(clippy::too_many_arguments)]
    pub fn dense_block<R: Rng + ?Sized>(
        &self,
        tape: &Tape,
        store: &ParamStore,
        input: Var,
        block: usize,
        mode: Mode,
        rng: &mut R,
        updates: &mut Vec<NormUpdate>,
    ) -> Result<Var> {
        let pairs = self
            .blocks
            .get(block)
            .ok_or_else(|| Error::InvalidArgument(format!("no dense block {block}")))?;
        let expected = self.config.block_input_channels(block);
        let got = *tape.shape(input).last().unwrap_or(&0);
        if got != expected {
            return Err(Error::shape(
                "dense_block",
                format!("block {block} expects {expected} input channels, got {got}"),
            ));
        }
        let mut features = vec![input];
        for pair in pairs {
            let x = if features.len() == 1 {
                input
            } else {
                tape.concat(&features)?
            };
            let x = self.brd(tape, store, x, &pair.norm_in, mode, rng, updates)?;
            let x = tape.conv2d(x, tape.param(store, pair.bottleneck), (1, 1), Padding::Same)?;
            let x = self.brd(tape, store, x, &pair.norm_mid, mode, rng, updates)?;
            let x = tape.conv2d(x, tape.param(store, pair.conv), (1, 1), Padding::Same)?;
            features.push(x);
        }
        tape.concat(&features)
    }

    /// Batchnorm → ReLU → dropout.
    #[allow(clippy::too_many_arguments)]
    fn brd<R: Rng + ?Sized>(
        &self,
        tape: &Tape,
        store: &ParamStore,
        x: Var,
        norm: &NormLayer,
        mode: Mode,
        rng: &mut R,
        updates: &mut Vec<NormUpdate>,
    ) -> Result<Var> {
        let running = RunningStats {
            mean: store.buffer(norm.mean).data().to_vec(),
            var: store.buffer(norm.var).data().to_vec(),
        };
        let (y, stats) = tape.batchnorm(
            x,
            tape.param(store, norm.scale),
            tape.param(store, norm.shift),
            mode,
            &running,
            self.config.bn_epsilon,
        )?;
        if let Some(stats) = stats {
            updates.push(NormUpdate {
                mean: norm.mean,
                var: norm.var,
                stats,
            });
        }
        tape.dropout(tape.relu(y), self.config.dropout_ratio, mode, rng)
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn apply_norm_updates(&self, store: &mut ParamStore, updates: &[NormUpdate]) {
        for u in updates {
            let mut running = RunningStats {
                mean: store.buffer(u.mean).data().to_vec(),
                var: store.buffer(u.var).data().to_vec(),
            };
            running.update(&u.stats, self.config.bn_momentum);
            store.buffer_mut(u.mean).data_mut().copy_from_slice(&running.mean);
            store.buffer_mut(u.var).data_mut().copy_from_slice(&running.var);
        }
    }
}

fn norm_layer(store: &mut ParamStore, prefix: &str, channels: usize, bind: &mut Binder<'_>) -> Result<NormLayer> {
    let kind = LayerKind::Convolutional;
    Ok(NormLayer {
        scale: bind.param(store, &format!("{prefix}.scale"), kind, |_| Tensor::full(&[channels], 1.0))?,
        shift: bind.param(store, &format!("{prefix}.shift"), kind, |_| Tensor::zeros(&[channels]))?,
        mean: bind.buffer(store, &format!("{prefix}.running_mean"), Tensor::zeros(&[channels]))?,
        var: bind.buffer(store, &format!("{prefix}.running_var"), Tensor::full(&[channels], 1.0))?,
    })
}
