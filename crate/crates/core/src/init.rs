use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::tensor::{BufferId, LayerKind, ParamId, ParamStore, Tensor};

pub(crate) fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| {
        if bound == 0.0 {
            0.0
        } else {
            rng.gen_range(-bound..bound)
        }
    })
}

/// Glorot/Xavier uniform for a projection with the given fans.
pub(crate) fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

/// He uniform for a convolution kernel `[fh, fw, c_in, c_out]`.
pub(crate) fn he_conv<R: Rng + ?Sized>(shape: &[usize; 4], rng: &mut R) -> Tensor {
    let fan_in = shape[0] * shape[1] * shape[2];
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

/// Either creates parameters with fresh values or binds to existing ones by name.
pub(crate) enum Binder<'a> {
    Init(&'a mut dyn RngCore),
    Lookup,
}

impl Binder<'_> {
    pub(crate) fn param(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        kind: LayerKind,
        init: impl FnOnce(&mut dyn RngCore) -> Tensor,
    ) -> Result<ParamId> {
        match self {
            Binder::Init(rng) => store.add(name, init(&mut **rng), kind),
            Binder::Lookup => store
                .id(name)
                .ok_or_else(|| Error::Config(format!("parameter `{name}` missing from store"))),
        }
    }

    pub(crate) fn buffer(&mut self, store: &mut ParamStore, name: &str, value: Tensor) -> Result<BufferId> {
        match self {
            Binder::Init(_) => store.add_buffer(name, value),
            Binder::Lookup => store
                .buffer_id(name)
                .ok_or_else(|| Error::Config(format!("buffer `{name}` missing from store"))),
        }
    }
}
