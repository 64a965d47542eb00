//! Encoder + CAL decoder bundled with their vocabulary and input geometry.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::raster::preprocess;
use crate::decoder::{beam_search, AttentionMap, CalDecoder, CalStepper, DecoderDims};
use crate::encoder::{AnnotationGrid, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::tensor::{Mode, ParamStore, PoolMode, Tape, Tensor, Var};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected toy or full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// `k` and `d` are kept consistent with the vocabulary and encoder.
    pub decoder: DecoderDims,
    pub image_height: usize,
    pub image_width: usize,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn preset(preset: Preset, k: usize) -> Self {
        match preset {
            Preset::Toy => {
                let encoder = EncoderConfig::toy();
                let d = encoder.output_channels();
                ModelConfig {
                    encoder,
                    decoder: DecoderDims::toy(k, d),
                    image_height: 32,
                    image_width: 256,
                    max_len: 24,
                }
            }
            Preset::Full => {
                let encoder = EncoderConfig::full();
                let d = encoder.output_channels();
                ModelConfig {
                    encoder,
                    decoder: DecoderDims::full(k, d),
                    image_height: 100,
                    image_width: 800,
                    max_len: 150,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.decoder.d != self.encoder.output_channels() {
            return Err(Error::Config(format!(
                "decoder annotation dim {} differs from encoder output {}",
                self.decoder.d,
                self.encoder.output_channels()
            )));
        }
        let min = self.encoder.min_extent();
        if self.image_height < min || self.image_width < min || self.max_len == 0 {
            return Err(Error::Config(format!(
                "image {}x{} below {min}x{min} or max_len 0",
                self.image_height, self.image_width
            )));
        }
        Ok(())
    }

    /// Flat `key -> value` form used in checkpoint headers.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let e = &self.encoder;
        let d = &self.decoder;
        let pool = match e.pool_mode {
            PoolMode::Max => "max",
            PoolMode::Avg => "avg",
        };
        let entries: [(&str, String); 20] = [
            ("encoder.num_blocks", e.num_blocks.to_string()),
            ("encoder.sublayers_per_block", e.sublayers_per_block.to_string()),
            ("encoder.growth_rate", e.growth_rate.to_string()),
            ("encoder.bottleneck_width", e.bottleneck_width.to_string()),
            ("encoder.initial_channels", e.initial_channels.to_string()),
            ("encoder.dropout_ratio", format!("{:?}", e.dropout_ratio)),
            ("encoder.pool_mode", pool.to_string()),
            ("encoder.bn_epsilon", format!("{:?}", e.bn_epsilon)),
            ("encoder.bn_momentum", format!("{:?}", e.bn_momentum)),
            ("decoder.k", d.k.to_string()),
            ("decoder.m", d.m.to_string()),
            ("decoder.h", d.h.to_string()),
            ("decoder.n", d.n.to_string()),
            ("decoder.d", d.d.to_string()),
            ("decoder.f", d.f.to_string()),
            ("decoder.q", d.q.to_string()),
            ("image.height", self.image_height.to_string()),
            ("image.width", self.image_width.to_string()),
            ("decode.max_len", self.max_len.to_string()),
            ("format", "caltext-model".to_string()),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = pairs
                .get(key)
                .ok_or_else(|| Error::Config(format!("model config missing `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::Config(format!("model config `{key}` has bad value `{raw}`")))
        }
        let pool_mode = match get::<String>(pairs, "encoder.pool_mode")?.as_str() {
            "max" => PoolMode::Max,
            "avg" => PoolMode::Avg,
            other => return Err(Error::Config(format!("unknown pool mode `{other}`"))),
        };
        let config = ModelConfig {
            encoder: EncoderConfig {
                num_blocks: get(pairs, "encoder.num_blocks")?,
                sublayers_per_block: get(pairs, "encoder.sublayers_per_block")?,
                growth_rate: get(pairs, "encoder.growth_rate")?,
                bottleneck_width: get(pairs, "encoder.bottleneck_width")?,
                initial_channels: get(pairs, "encoder.initial_channels")?,
                dropout_ratio: get(pairs, "encoder.dropout_ratio")?,
                pool_mode,
                bn_epsilon: get(pairs, "encoder.bn_epsilon")?,
                bn_momentum: get(pairs, "encoder.bn_momentum")?,
            },
            decoder: DecoderDims {
                k: get(pairs, "decoder.k")?,
                m: get(pairs, "decoder.m")?,
                h: get(pairs, "decoder.h")?,
                n: get(pairs, "decoder.n")?,
                d: get(pairs, "decoder.d")?,
                f: get(pairs, "decoder.f")?,
                q: get(pairs, "decoder.q")?,
            },
            image_height: get(pairs, "image.height")?,
            image_width: get(pairs, "image.width")?,
            max_len: get(pairs, "decode.max_len")?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Best hypothesis for one image, with its per-step attention.
#[derive(Debug, Clone)]
pub struct Recognition {
    pub text: String,
    pub indices: Vec<usize>,
    pub log_prob: f64,
    pub alphas: Vec<AttentionMap>,
}

#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: CalDecoder,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        check_vocab(&config, &vocab)?;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config.encoder.clone(), &mut store, &mut rng)?;
        let decoder = CalDecoder::new(config.decoder, &mut store, &mut rng)?;
        Ok(Model {
            config,
            vocab,
            store,
            encoder,
            decoder,
        })
    }

    /// Rebinds a model to an existing parameter store (e.g. from a checkpoint).
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, mut store: ParamStore) -> Result<Self> {
        check_vocab(&config, &vocab)?;
        config.validate()?;
        let encoder = Encoder::from_store(config.encoder.clone(), &mut store)?;
        let decoder = CalDecoder::from_store(config.decoder, &mut store)?;
        Ok(Model {
            config,
            vocab,
            store,
            encoder,
            decoder,
        })
    }

    /// Raw raster → network input of the configured size.
    pub fn prepare_image(&self, raw: &Tensor) -> Result<Tensor> {
        preprocess(raw, self.config.image_height, self.config.image_width)
    }

    /// Encodes a batch of prepared images on `tape`; returns one `[h, w, d]`
    /// grid per image plus the encoder's batchnorm updates.
    pub fn encode_batch<R: Rng + ?Sized>(
        &self,
        tape: &Tape,
        images: &[&Tensor],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<Var>, Vec<crate::encoder::NormUpdate>)> {
        let owned: Vec<Tensor> = images.iter().map(|t| (*t).clone()).collect();
        let batch = tape.constant(Tensor::stack(&owned)?);
        let encoded = self.encoder.encode(tape, &self.store, batch, mode, rng)?;
        let grids = (0..images.len())
            .map(|i| tape.select(encoded.features, i))
            .collect::<Result<Vec<_>>>()?;
        Ok((grids, encoded.norm_updates))
    }

    /// Annotation grid of one prepared image in inference mode.
    pub fn annotate(&self, image: &Tensor) -> Result<AnnotationGrid> {
        let tape = Tape::new();
        // inference mode never draws from the rng
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (grids, _) = self.encode_batch(&tape, &[image], Mode::Infer, &mut rng)?;
        AnnotationGrid::new(tape.value(grids[0]))
    }

    /// Beam-search recognition of one prepared image.
    pub fn recognize(&self, image: &Tensor, beam_width: usize) -> Result<Recognition> {
        let grid = self.annotate(image)?;
        let stepper = CalStepper::new(&self.decoder, &self.store, &grid)?;
        let hyp = beam_search(&stepper, beam_width, self.config.max_len)?;
        let indices = hyp.characters().to_vec();
        Ok(Recognition {
            text: self.vocab.decode_indices(&indices)?,
            indices,
            log_prob: hyp.log_prob,
            alphas: hyp.alphas,
        })
    }
}

fn check_vocab(config: &ModelConfig, vocab: &Vocabulary) -> Result<()> {
    if config.decoder.k != vocab.size() {
        return Err(Error::Config(format!(
            "decoder has k = {} classes but vocabulary has {}",
            config.decoder.k,
            vocab.size()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["a", "b", "c"]).unwrap()
    }

    #[test]
    fn presets_are_consistent() {
        for p in [Preset::Toy, Preset::Full] {
            let c = ModelConfig::preset(p, 130);
            c.validate().unwrap();
            assert_eq!(ModelConfig::from_pairs(&c.to_pairs()).unwrap(), c);
        }
        let full = ModelConfig::preset(Preset::Full, 130);
        assert_eq!((full.decoder.d, full.decoder.q, full.decoder.f), (684, 512, 11));
        assert_eq!(full.encoder.grid_extents(full.image_height, full.image_width), (12, 100));
    }

    #[test]
    fn vocabulary_size_must_match() {
        let c = ModelConfig::preset(Preset::Toy, 5);
        assert!(Model::new(c, vocab(), 0).is_err());
    }

    #[test]
    fn recognition_is_deterministic() {
        let c = ModelConfig::preset(Preset::Toy, 4);
        let model = Model::new(c.clone(), vocab(), 1).unwrap();
        let img = Tensor::from_fn(&[32, 256, 1], |i| ((i * 7919) % 13) as f64 / 12.0);
        let a = model.recognize(&img, 3).unwrap();
        let b = model.recognize(&img, 3).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.log_prob.to_bits(), b.log_prob.to_bits());
        assert!(a.indices.len() <= c.max_len);

        let rebound = Model::from_parts(c, vocab(), model.store.clone()).unwrap();
        let r = rebound.recognize(&img, 3).unwrap();
        assert_eq!(r.log_prob.to_bits(), a.log_prob.to_bits());
    }
}
