use std::cmp::Ordering;

use super::{AttentionMap, CalDecoder, DecoderState, PreparedGrid};
use crate::encoder::AnnotationGrid;
use crate::error::{Error, Result};
use crate::tensor::ParamStore;
use crate::vocab::EOS;

/// What one decoding step yields for a given state and previous character.
#[derive(Debug, Clone)]
pub struct StepResult<S> {
    pub probs: Vec<f64>,
    pub state: S,
    pub attention: Option<AttentionMap>,
}

/// A step-at-a-time sequence model that beam search can drive.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn initial_state(&self) -> Self::State;
    fn step(&self, state: &Self::State, y_prev: usize) -> Result<StepResult<Self::State>>;
}

/// The CAL decoder bound to one encoded image.
pub struct CalStepper<'a> {
    decoder: &'a CalDecoder,
    store: &'a ParamStore,
    grid: PreparedGrid,
}

impl<'a> CalStepper<'a> {
    pub fn new(decoder: &'a CalDecoder, store: &'a ParamStore, grid: &AnnotationGrid) -> Result<Self> {
        Ok(CalStepper {
            decoder,
            store,
            grid: decoder.prepare_grid(store, grid)?,
        })
    }
}

impl StepModel for CalStepper<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.decoder.dims().k
    }

    fn initial_state(&self) -> DecoderState {
        DecoderState::initial(self.decoder.dims(), self.grid.h, self.grid.w)
    }

    fn step(&self, state: &DecoderState, y_prev: usize) -> Result<StepResult<DecoderState>> {
        let mut input = state.clone();
        input.y_prev = y_prev;
        let out = self.decoder.decode_step(self.store, &input, &self.grid)?;
        Ok(StepResult {
            probs: out.probs.into_data(),
            state: out.state,
            attention: Some(out.alpha),
        })
    }
}

/// A (partial) output sequence with its accumulated log probability.
#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    pub sequence: Vec<usize>,
    pub log_prob: f64,
    pub state: S,
    pub alphas: Vec<AttentionMap>,
}

impl<S> Hypothesis<S> {
    pub fn is_terminated(&self) -> bool {
        self.sequence.last() == Some(&EOS)
    }

    /// Character indices without the trailing end marker.
    pub fn characters(&self) -> &[usize] {
        match self.sequence.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.sequence,
        }
    }
}

/// Ranking: higher log probability, then shorter, then lexicographically smaller.
fn rank(a_lp: f64, a_seq: &[usize], b_lp: f64, b_seq: &[usize]) -> Ordering {
    b_lp.total_cmp(&a_lp)
        .then(a_seq.len().cmp(&b_seq.len()))
        .then_with(|| a_seq.cmp(b_seq))
}

/// Keeps the `beam_width` best partial hypotheses at every step.
///
/// A hypothesis finishes when it emits the end marker or reaches `max_len`
/// characters. Search stops once no live hypothesis can beat the best
/// finished one, since log probabilities only decrease with length.
pub fn beam_search<M: StepModel>(model: &M, beam_width: usize, max_len: usize) -> Result<Hypothesis<M::State>> {
    if beam_width == 0 || max_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "beam width ({beam_width}) and max length ({max_len}) must be at least 1"
        )));
    }
    let mut live = vec![Hypothesis {
        sequence: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state(),
        alphas: Vec::new(),
    }];
    let mut finished: Vec<Hypothesis<M::State>> = Vec::new();

    while !live.is_empty() {
        let mut expanded = Vec::with_capacity(live.len());
        for hyp in &live {
            let y_prev = hyp.sequence.last().copied().unwrap_or(EOS);
            expanded.push(model.step(&hyp.state, y_prev)?);
        }
        // (parent, token, log_prob)
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (i, res) in expanded.iter().enumerate() {
            for (token, &p) in res.probs.iter().enumerate() {
                candidates.push((i, token, live[i].log_prob + p.ln()));
            }
        }
        let key = |c: &(usize, usize, f64)| {
            let mut seq = live[c.0].sequence.clone();
            seq.push(c.1);
            seq
        };
        candidates.sort_by(|a, b| rank(a.2, &key(a), b.2, &key(b)));
        candidates.truncate(beam_width);

        let mut next = Vec::with_capacity(candidates.len());
        for (parent, token, log_prob) in candidates {
            let res = &expanded[parent];
            let mut alphas = live[parent].alphas.clone();
            alphas.extend(res.attention.clone());
            let mut sequence = live[parent].sequence.clone();
            sequence.push(token);
            let hyp = Hypothesis {
                sequence,
                log_prob,
                state: res.state.clone(),
                alphas,
            };
            if token == EOS || hyp.sequence.len() >= max_len {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;

        if let Some(best) = best_of(&finished) {
            let best_live = live.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if best.log_prob >= best_live {
                break;
            }
        }
    }
    let best = finished
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| rank(a.log_prob, &a.sequence, b.log_prob, &b.sequence))
        .map(|(i, _)| i)
        .expect("beam search always finishes at least one hypothesis");
    Ok(finished.swap_remove(best))
}

fn best_of<S>(hyps: &[Hypothesis<S>]) -> Option<&Hypothesis<S>> {
    hyps.iter()
        .min_by(|a, b| rank(a.log_prob, &a.sequence, b.log_prob, &b.sequence))
}

/// Argmax decoding (first index on ties) until the end marker or `max_len`.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Result<Hypothesis<M::State>> {
    let mut hyp = Hypothesis {
        sequence: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state(),
        alphas: Vec::new(),
    };
    while hyp.sequence.len() < max_len {
        let y_prev = hyp.sequence.last().copied().unwrap_or(EOS);
        let res = model.step(&hyp.state, y_prev)?;
        let mut best = 0;
        for (i, &p) in res.probs.iter().enumerate() {
            if p > res.probs[best] {
                best = i;
            }
        }
        hyp.log_prob += res.probs[best].ln();
        hyp.sequence.push(best);
        hyp.state = res.state;
        hyp.alphas.extend(res.attention);
        if best == EOS {
            break;
        }
    }
    Ok(hyp)
}
