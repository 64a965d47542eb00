//! GRU → coverage attention → GRU decoder.
//!
//! One decoding step with previous character `y`, previous hidden state `h`
//! and aggregated attention `S` (sum of all earlier attention maps):
//!
//! ```text
//! ĥ  = GRU₁(E·y, h)                              predicted hidden state
//! F  = S ∗ Q                                     coverage volume [h_enc, w_enc, q]
//! e_l = v_aᵀ tanh(W_a ĥ + U_a a_l + U_f f_l)     per-region energy
//! α  = softmax(e)                                attention over all L regions
//! c  = Σ_l α_l a_l                               context vector
//! h' = GRU₂(ĥ, c)
//! p  = softmax(W_o (W_y E·y + W_h h' + W_c c))
//! S' = S + α
//! ```
//!
//! The attention uses the current step's `ĥ`. The initial hidden state is
//! zero and the end-of-sequence index doubles as the start symbol.

mod beam;

pub use beam::{beam_search, greedy_decode, CalStepper, Hypothesis, StepModel, StepResult};

use rand::Rng;

use crate::encoder::AnnotationGrid;
use crate::error::{Error, Result};
use crate::init::{self, Binder};
use crate::tensor::{LayerKind, Padding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::vocab::EOS;

/// Decoder dimensions: vocabulary `k`, embedding `m`, hidden `h`, attention
/// `n`, annotation `d`, coverage filter size `f` and count `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderDims {
    pub k: usize,
    pub m: usize,
    pub h: usize,
    pub n: usize,
    pub d: usize,
    pub f: usize,
    pub q: usize,
}

impl DecoderDims {
    pub fn full(k: usize, d: usize) -> Self {
        DecoderDims {
            k,
            m: 256,
            h: 256,
            n: 256,
            d,
            f: 11,
            q: 512,
        }
    }

    pub fn toy(k: usize, d: usize) -> Self {
        DecoderDims {
            k,
            m: 16,
            h: 24,
            n: 16,
            d,
            f: 3,
            q: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.k, self.m, self.h, self.n, self.d, self.f, self.q];
        if all.contains(&0) {
            return Err(Error::Config(format!("decoder dims must be positive: {self:?}")));
        }
        if self.k < 2 {
            return Err(Error::Config("vocabulary needs at least one symbol besides EOS".into()));
        }
        if self.f.is_multiple_of(2) {
            return Err(Error::Config(format!("coverage filter size must be odd, got {}", self.f)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Gru1 {
    w_yz: ParamId,
    w_yr: ParamId,
    w_yh: ParamId,
    u_hz: ParamId,
    u_hr: ParamId,
    u_rh: ParamId,
}

#[derive(Debug, Clone)]
struct Attention {
    coverage: ParamId,
    w_a: ParamId,
    u_a: ParamId,
    u_f: ParamId,
    v_a: ParamId,
}

#[derive(Debug, Clone)]
struct Gru2 {
    u_hz: ParamId,
    u_hr: ParamId,
    u_rh: ParamId,
    c_cz: ParamId,
    c_cr: ParamId,
    c_ch: ParamId,
}

#[derive(Debug, Clone)]
struct Output {
    w_o: ParamId,
    w_y: ParamId,
    w_h: ParamId,
    w_c: ParamId,
}

#[derive(Debug, Clone)]
pub struct CalDecoder {
    dims: DecoderDims,
    embedding: ParamId,
    gru1: Gru1,
    attn: Attention,
    gru2: Gru2,
    out: Output,
}

/// Annotation grid on a tape, flattened to `[L, d]`, with `U_a·a_l`
/// precomputed as `[L, n]` since it does not change across steps.
#[derive(Debug, Clone, Copy)]
pub struct GridView {
    pub h: usize,
    pub w: usize,
    pub annotations: Var,
    pub projected: Var,
}

impl GridView {
    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Recurrent state on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeState {
    pub h: Var,
    /// Aggregated attention `[h_enc, w_enc]`.
    pub s_alpha: Var,
}

/// Everything one step produces on the tape.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub h_hat: Var,
    pub coverage: Var,
    pub alpha: Var,
    pub context: Var,
    pub probs: Var,
    pub next: TapeState,
}

/// Attention weights over the `h × w` regions of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub h: usize,
    pub w: usize,
    /// `[L]`, row-major over the grid.
    pub weights: Tensor,
}

impl AttentionMap {
    pub fn sum(&self) -> f64 {
        self.weights.sum()
    }
}

/// Owned recurrent state carried between inference steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h_prev: Tensor,
    pub y_prev: usize,
    pub s_alpha: Tensor,
    /// 1-based index of the next step.
    pub t: usize,
}

impl DecoderState {
    pub fn initial(dims: &DecoderDims, grid_h: usize, grid_w: usize) -> Self {
        DecoderState {
            h_prev: Tensor::zeros(&[dims.h]),
            y_prev: EOS,
            s_alpha: Tensor::zeros(&[grid_h, grid_w]),
            t: 1,
        }
    }
}

/// Owned counterpart of [`GridView`] for step-at-a-time inference.
#[derive(Debug, Clone)]
pub struct PreparedGrid {
    pub h: usize,
    pub w: usize,
    annotations: Tensor,
    projected: Tensor,
}

/// Output of [`CalDecoder::decode_step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub probs: Tensor,
    pub alpha: AttentionMap,
    pub state: DecoderState,
}

impl CalDecoder {
    /// Registers freshly initialized decoder parameters under `decoder.*`.
    /// Projections are Glorot-uniform; the coverage filters start at zero.
    pub fn new<R: Rng>(dims: DecoderDims, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        Self::build(dims, store, Binder::Init(rng))
    }

    pub fn from_store(dims: DecoderDims, store: &mut ParamStore) -> Result<Self> {
        Self::build(dims, store, Binder::Lookup)
    }

    fn build(dims: DecoderDims, store: &mut ParamStore, mut bind: Binder<'_>) -> Result<Self> {
        dims.validate()?;
        let DecoderDims { k, m, h, n, d, f, q } = dims;
        let dense = LayerKind::NonConvolutional;
        let mat = |bind: &mut Binder<'_>, store: &mut ParamStore, name: &str, rows: usize, cols: usize| {
            bind.param(store, &format!("decoder.{name}"), dense, |r| {
                init::glorot(&[rows, cols], cols, rows, r)
            })
        };
        let embedding = mat(&mut bind, store, "embedding", m, k)?;
        let gru1 = Gru1 {
            w_yz: mat(&mut bind, store, "gru1.w_yz", h, m)?,
            w_yr: mat(&mut bind, store, "gru1.w_yr", h, m)?,
            w_yh: mat(&mut bind, store, "gru1.w_yh", h, m)?,
            u_hz: mat(&mut bind, store, "gru1.u_hz", h, h)?,
            u_hr: mat(&mut bind, store, "gru1.u_hr", h, h)?,
            u_rh: mat(&mut bind, store, "gru1.u_rh", h, h)?,
        };
        let attn = Attention {
            coverage: bind.param(store, "decoder.attn.coverage", LayerKind::Convolutional, |_| {
                Tensor::zeros(&[f, f, 1, q])
            })?,
            w_a: mat(&mut bind, store, "attn.w_a", n, h)?,
            u_a: mat(&mut bind, store, "attn.u_a", n, d)?,
            u_f: mat(&mut bind, store, "attn.u_f", n, q)?,
            v_a: bind.param(store, "decoder.attn.v_a", dense, |r| init::glorot(&[n], n, 1, r))?,
        };
        let gru2 = Gru2 {
            u_hz: mat(&mut bind, store, "gru2.u_hz", h, h)?,
            u_hr: mat(&mut bind, store, "gru2.u_hr", h, h)?,
            u_rh: mat(&mut bind, store, "gru2.u_rh", h, h)?,
            c_cz: mat(&mut bind, store, "gru2.c_cz", h, d)?,
            c_cr: mat(&mut bind, store, "gru2.c_cr", h, d)?,
            c_ch: mat(&mut bind, store, "gru2.c_ch", h, d)?,
        };
        let out = Output {
            w_o: mat(&mut bind, store, "out.w_o", k, m)?,
            w_y: mat(&mut bind, store, "out.w_y", m, m)?,
            w_h: mat(&mut bind, store, "out.w_h", m, h)?,
            w_c: mat(&mut bind, store, "out.w_c", m, d)?,
        };
        Ok(CalDecoder {
            dims,
            embedding,
            gru1,
            attn,
            gru2,
            out,
        })
    }

    pub fn dims(&self) -> &DecoderDims {
        &self.dims
    }

    /// Flattens `[h, w, d]` features and projects them with `U_a`.
    pub fn view(&self, tape: &Tape, store: &ParamStore, features: Var) -> Result<GridView> {
        let &[h, w, d] = tape.shape(features).as_slice() else {
            return Err(Error::shape(
                "decoder grid",
                format!("expected [h, w, d], got {:?}", tape.shape(features)),
            ));
        };
        if d != self.dims.d {
            return Err(Error::shape(
                "decoder grid",
                format!("annotation dim {d} but decoder expects {}", self.dims.d),
            ));
        }
        let annotations = tape.reshape(features, &[h * w, d])?;
        let projected = tape.matmul_t(annotations, tape.param(store, self.attn.u_a))?;
        Ok(GridView {
            h,
            w,
            annotations,
            projected,
        })
    }

    pub fn initial_state(&self, tape: &Tape, grid: &GridView) -> TapeState {
        TapeState {
            h: tape.constant(Tensor::zeros(&[self.dims.h])),
            s_alpha: tape.constant(Tensor::zeros(&[grid.h, grid.w])),
        }
    }

    fn embed(&self, tape: &Tape, store: &ParamStore, y_prev: usize) -> Result<Var> {
        if y_prev >= self.dims.k {
            return Err(Error::InvalidArgument(format!(
                "previous character {y_prev} out of vocabulary range k = {}",
                self.dims.k
            )));
        }
        tape.column(tape.param(store, self.embedding), y_prev)
    }

    /// First GRU: predicted hidden state ĥ from the previous character and hidden state.
    pub fn gru1_step(&self, tape: &Tape, store: &ParamStore, y_prev: usize, h_prev: Var) -> Result<Var> {
        let p = |id| tape.param(store, id);
        let ey = self.embed(tape, store, y_prev)?;
        let g = &self.gru1;
        let z = tape.sigmoid(tape.add(tape.matvec(p(g.w_yz), ey)?, tape.matvec(p(g.u_hz), h_prev)?)?);
        let r = tape.sigmoid(tape.add(tape.matvec(p(g.w_yr), ey)?, tape.matvec(p(g.u_hr), h_prev)?)?);
        let gated = tape.mul(r, tape.matvec(p(g.u_rh), h_prev)?)?;
        let candidate = tape.tanh(tape.add(tape.matvec(p(g.w_yh), ey)?, gated)?);
        interpolate(tape, z, h_prev, candidate)
    }

    /// Coverage volume `S ∗ Q` with same padding: `[h_enc, w_enc, q]`.
    pub fn compute_coverage(&self, tape: &Tape, store: &ParamStore, s_alpha: Var) -> Result<Var> {
        let shape = tape.shape(s_alpha);
        let &[h, w] = shape.as_slice() else {
            return Err(Error::shape("coverage", format!("expected [h, w], got {shape:?}")));
        };
        let s = tape.reshape(s_alpha, &[h, w, 1])?;
        tape.conv2d(s, tape.param(store, self.attn.coverage), (1, 1), Padding::Same)
    }

    /// Attention weights `[L]` from ĥ, the annotations and the coverage volume.
    pub fn attend(&self, tape: &Tape, store: &ParamStore, h_hat: Var, grid: &GridView, coverage: Var) -> Result<Var> {
        let p = |id| tape.param(store, id);
        let cov = tape.reshape(coverage, &[grid.len(), self.dims.q])?;
        let cov_proj = tape.matmul_t(cov, p(self.attn.u_f))?;
        let pre = tape.add(grid.projected, cov_proj)?;
        let pre = tape.add_row(pre, tape.matvec(p(self.attn.w_a), h_hat)?)?;
        let energies = tape.matvec(tape.tanh(pre), p(self.attn.v_a))?;
        Ok(tape.softmax(energies))
    }

    /// Context vector `Σ_l α_l a_l`.
    pub fn context(&self, tape: &Tape, alpha: Var, grid: &GridView) -> Result<Var> {
        let len = tape.shape(alpha).iter().product::<usize>();
        if len != grid.len() {
            return Err(Error::shape(
                "context",
                format!("{len} attention weights for {} regions", grid.len()),
            ));
        }
        tape.vecmat(alpha, grid.annotations)
    }

    /// Second GRU: final hidden state from ĥ and the context vector.
    pub fn gru2_step(&self, tape: &Tape, store: &ParamStore, h_hat: Var, context: Var) -> Result<Var> {
        let p = |id| tape.param(store, id);
        let g = &self.gru2;
        let z = tape.sigmoid(tape.add(tape.matvec(p(g.u_hz), h_hat)?, tape.matvec(p(g.c_cz), context)?)?);
        let r = tape.sigmoid(tape.add(tape.matvec(p(g.u_hr), h_hat)?, tape.matvec(p(g.c_cr), context)?)?);
        let gated = tape.mul(r, tape.matvec(p(g.u_rh), h_hat)?)?;
        let candidate = tape.tanh(tape.add(gated, tape.matvec(p(g.c_ch), context)?)?);
        interpolate(tape, z, h_hat, candidate)
    }

    /// Probability vector `[k]` over the next character.
    pub fn output_probs(&self, tape: &Tape, store: &ParamStore, y_prev: usize, h: Var, context: Var) -> Result<Var> {
        let p = |id| tape.param(store, id);
        let ey = self.embed(tape, store, y_prev)?;
        let mix = tape.add_all(&[
            tape.matvec(p(self.out.w_y), ey)?,
            tape.matvec(p(self.out.w_h), h)?,
            tape.matvec(p(self.out.w_c), context)?,
        ])?;
        Ok(tape.softmax(tape.matvec(p(self.out.w_o), mix)?))
    }

    /// One full decoding step on a tape.
    pub fn step(
        &self,
        tape: &Tape,
        store: &ParamStore,
        state: TapeState,
        y_prev: usize,
        grid: &GridView,
    ) -> Result<StepVars> {
        let h_hat = self.gru1_step(tape, store, y_prev, state.h)?;
        let coverage = self.compute_coverage(tape, store, state.s_alpha)?;
        let alpha = self.attend(tape, store, h_hat, grid, coverage)?;
        let context = self.context(tape, alpha, grid)?;
        let h = self.gru2_step(tape, store, h_hat, context)?;
        let probs = self.output_probs(tape, store, y_prev, h, context)?;
        let s_alpha = tape.add(state.s_alpha, tape.reshape(alpha, &[grid.h, grid.w])?)?;
        Ok(StepVars {
            h_hat,
            coverage,
            alpha,
            context,
            probs,
            next: TapeState { h, s_alpha },
        })
    }

    /// Decodes with the ground-truth previous character fed at every step.
    /// `targets` is the full index sequence including its end marker.
    pub fn teacher_forced(
        &self,
        tape: &Tape,
        store: &ParamStore,
        grid: &GridView,
        targets: &[usize],
    ) -> Result<Vec<StepVars>> {
        let mut state = self.initial_state(tape, grid);
        let mut y_prev = EOS;
        let mut steps = Vec::with_capacity(targets.len());
        for &y in targets {
            let s = self.step(tape, store, state, y_prev, grid)?;
            state = s.next;
            y_prev = y;
            steps.push(s);
        }
        Ok(steps)
    }

    /// Caches the step-invariant part of the attention for a grid.
    pub fn prepare_grid(&self, store: &ParamStore, grid: &AnnotationGrid) -> Result<PreparedGrid> {
        let tape = Tape::new();
        let view = self.view(&tape, store, tape.constant(grid.vectors.clone()))?;
        Ok(PreparedGrid {
            h: grid.h,
            w: grid.w,
            annotations: tape.value(view.annotations),
            projected: tape.value(view.projected),
        })
    }

    /// One inference step from an owned state.
    pub fn decode_step(&self, store: &ParamStore, state: &DecoderState, grid: &PreparedGrid) -> Result<StepOutcome> {
        let tape = Tape::new();
        let view = GridView {
            h: grid.h,
            w: grid.w,
            annotations: tape.constant(grid.annotations.clone()),
            projected: tape.constant(grid.projected.clone()),
        };
        let tape_state = TapeState {
            h: tape.constant(state.h_prev.clone()),
            s_alpha: tape.constant(state.s_alpha.clone()),
        };
        let out = self.step(&tape, store, tape_state, state.y_prev, &view)?;
        Ok(StepOutcome {
            probs: tape.value(out.probs),
            alpha: AttentionMap {
                h: grid.h,
                w: grid.w,
                weights: tape.value(out.alpha),
            },
            state: DecoderState {
                h_prev: tape.value(out.next.h),
                y_prev: state.y_prev,
                s_alpha: tape.value(out.next.s_alpha),
                t: state.t + 1,
            },
        })
    }
}

/// `z ⊗ prev + (1 − z) ⊗ candidate`.
fn interpolate(tape: &Tape, z: Var, prev: Var, candidate: Var) -> Result<Var> {
    let keep = tape.mul(z, prev)?;
    let update = tape.mul(tape.one_minus(z), candidate)?;
    tape.add(keep, update)
}
