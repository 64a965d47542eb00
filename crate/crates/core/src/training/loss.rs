//! Regularized cross-entropy plus attention localization.

use crate::decoder::{CalDecoder, GridView};
use crate::error::{Error, Result};
use crate::tensor::{LayerKind, ParamStore, Tape, Tensor, Var};
use crate::vocab::EOS;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalizationMode {
    /// `Σ_t Σ_l |α_tl|`; constant `T` for softmax attention, so it never moves the weights.
    Literal,
    /// `Σ_t (1 − Σ_l α_tl²)`; zero for one-hot maps, largest for uniform ones.
    Surrogate,
}

impl std::str::FromStr for LocalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(LocalizationMode::Literal),
            "surrogate" | "sparsity_surrogate" => Ok(LocalizationMode::Surrogate),
            other => Err(Error::Config(format!("unknown localization mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub localization: LocalizationMode,
    pub clip_threshold: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1e-4,
            gamma: 1.0,
            localization: LocalizationMode::Literal,
            clip_threshold: 100.0,
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config(format!("lambda {} and gamma {} must be >= 0", self.lambda, self.gamma)));
        }
        if self.clip_threshold <= 0.0 {
            return Err(Error::Config(format!("clip threshold {} must be > 0", self.clip_threshold)));
        }
        if !(0.0..1.0).contains(&self.rho) || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("adadelta rho {} / epsilon {} out of range", self.rho, self.epsilon)));
        }
        Ok(())
    }
}

/// Attention penalty summed over steps.
///
/// Every α is a softmax output, so its ℓ1 mass is identically 1 and the
/// literal term is the step count. It is evaluated in that closed form:
/// summing `|α|` numerically only adds rounding noise of a few ulps.
pub fn localization_penalty(tape: &Tape, alphas: &[Var], mode: LocalizationMode) -> Result<Var> {
    if alphas.is_empty() || mode == LocalizationMode::Literal {
        return Ok(tape.constant(Tensor::scalar(alphas.len() as f64)));
    }
    let terms: Vec<Var> = alphas
        .iter()
        .map(|&a| tape.affine(tape.sum(tape.square(a)), -1.0, 1.0))
        .collect();
    tape.add_all(&terms)
}

/// Squared ℓ2 norm of every non-convolutional parameter.
pub fn regularizer(tape: &Tape, store: &ParamStore) -> Result<Var> {
    let terms: Vec<Var> = store
        .ids()
        .filter(|&id| store.get(id).kind == LayerKind::NonConvolutional)
        .map(|id| tape.sum(tape.square(tape.param(store, id))))
        .collect();
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    tape.add_all(&terms)
}

fn check_target(target: &[usize]) -> Result<()> {
    if target.last() != Some(&EOS) {
        return Err(Error::InvalidArgument(
            "target must be a nonempty index sequence ending with the end marker".into(),
        ));
    }
    Ok(())
}

/// Cross-entropy and weighted localization over the first `steps` positions
/// of a teacher-forced decode: `−Σ ln p(y_t) + γ·L`.
fn data_terms(
    tape: &Tape,
    store: &ParamStore,
    decoder: &CalDecoder,
    grid: &GridView,
    target: &[usize],
    mask: &[bool],
    config: &LossConfig,
) -> Result<Var> {
    let mut state = decoder.initial_state(tape, grid);
    let mut y_prev = EOS;
    let mut nll = Vec::new();
    let mut alphas = Vec::new();
    for (&y, &live) in target.iter().zip(mask) {
        if !live {
            // the decode is causal, so masked tail steps contribute nothing
            break;
        }
        let s = decoder.step(tape, store, state, y_prev, grid)?;
        nll.push(tape.log_pick(s.probs, y, PROB_FLOOR)?);
        alphas.push(s.alpha);
        state = s.next;
        y_prev = y;
    }
    let ce = tape.scale(tape.add_all(&nll)?, -1.0);
    if config.gamma == 0.0 {
        return Ok(ce);
    }
    let penalty = localization_penalty(tape, &alphas, config.localization)?;
    tape.add(ce, tape.scale(penalty, config.gamma))
}

/// `E_n = −Σ_t ln p(y_t) + λ·r(θ) + γ·L_n` for one `[h, w, d]` annotation grid.
pub fn sequence_loss(
    tape: &Tape,
    store: &ParamStore,
    decoder: &CalDecoder,
    features: Var,
    target: &[usize],
    config: &LossConfig,
) -> Result<Var> {
    check_target(target)?;
    let grid = decoder.view(tape, store, features)?;
    let data = data_terms(tape, store, decoder, &grid, target, &vec![true; target.len()], config)?;
    if config.lambda == 0.0 {
        return Ok(data);
    }
    tape.add(data, tape.scale(regularizer(tape, store)?, config.lambda))
}

/// Pads every target to the longest with end markers; the mask is true on real positions.
pub fn pad_targets(targets: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
    let longest = targets.iter().map(Vec::len).max().unwrap_or(0);
    targets
        .iter()
        .map(|t| {
            let mut padded = t.clone();
            padded.resize(longest, EOS);
            let mask = (0..longest).map(|i| i < t.len()).collect();
            (padded, mask)
        })
        .unzip()
}

/// Mean of `E_n` over a batch of grids, using padded targets and a loss mask.
pub fn batch_loss(
    tape: &Tape,
    store: &ParamStore,
    decoder: &CalDecoder,
    grids: &[Var],
    targets: &[Vec<usize>],
    config: &LossConfig,
) -> Result<Var> {
    if grids.is_empty() || grids.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "batch of {} grids and {} targets",
            grids.len(),
            targets.len()
        )));
    }
    for t in targets {
        check_target(t)?;
    }
    let (padded, masks) = pad_targets(targets);
    let mut per_sample = Vec::with_capacity(grids.len());
    for ((&g, target), mask) in grids.iter().zip(&padded).zip(&masks) {
        let grid = decoder.view(tape, store, g)?;
        per_sample.push(data_terms(tape, store, decoder, &grid, target, mask, config)?);
    }
    let mean = tape.scale(tape.add_all(&per_sample)?, 1.0 / grids.len() as f64);
    if config.lambda == 0.0 {
        return Ok(mean);
    }
    tape.add(mean, tape.scale(regularizer(tape, store)?, config.lambda))
}
