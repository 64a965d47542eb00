use rand::Rng;

use super::tape::{slot, Node, Op, Tape, Var};
use super::Mode;
use crate::error::{Error, Result};

/// Per-channel running mean and variance used by batchnorm at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// Exponential moving average towards the observed batch statistics.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

/// Statistics of one training-mode batchnorm call. `var` is the unbiased estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Tape {
    /// Batch normalization over every axis but the last (channel) one.
    ///
    /// Train mode normalizes with the statistics of `x` itself and returns them
    /// so the caller can update its running averages; infer mode uses `running`.
    pub fn batchnorm(
        &self,
        x: Var,
        scale: Var,
        shift: Var,
        mode: Mode,
        running: &RunningStats,
        epsilon: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (shape, value, xhat, inv_std, stats) = {
            let nodes = self.nodes();
            let xs = &nodes[x.0].shape;
            let c = *xs
                .last()
                .ok_or_else(|| Error::shape("batchnorm", "scalar input"))?;
            for (name, v) in [("scale", scale), ("shift", shift)] {
                if nodes[v.0].shape != [c] {
                    return Err(Error::shape(
                        "batchnorm",
                        format!("{name} {:?} for input {xs:?}", nodes[v.0].shape),
                    ));
                }
            }
            if running.mean.len() != c || running.var.len() != c {
                return Err(Error::shape(
                    "batchnorm",
                    format!("running stats for {} channels, input has {c}", running.mean.len()),
                ));
            }
            let xv = &nodes[x.0].value;
            let rows = xv.len() / c;
            let (mean, var_biased, stats) = match mode {
                Mode::Train => {
                    let mut mean = vec![0.0; c];
                    for row in xv.chunks_exact(c) {
                        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                    }
                    mean.iter_mut().for_each(|m| *m /= rows as f64);
                    let mut var = vec![0.0; c];
                    for row in xv.chunks_exact(c) {
                        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    let unbiased = var
                        .iter()
                        .map(|s| if rows > 1 { s / (rows - 1) as f64 } else { 0.0 })
                        .collect();
                    var.iter_mut().for_each(|s| *s /= rows as f64);
                    let stats = BatchStats {
                        mean: mean.clone(),
                        var: unbiased,
                    };
                    (mean, var, Some(stats))
                }
                Mode::Infer => (running.mean.clone(), running.var.clone(), None),
            };
            let inv_std: Vec<f64> = var_biased
                .iter()
                .map(|v| 1.0 / (v + epsilon).sqrt())
                .collect();
            let (gamma, beta) = (&nodes[scale.0].value, &nodes[shift.0].value);
            let mut xhat = Vec::with_capacity(xv.len());
            let mut out = Vec::with_capacity(xv.len());
            for row in xv.chunks_exact(c) {
                for ch in 0..c {
                    let h = (row[ch] - mean[ch]) * inv_std[ch];
                    xhat.push(h);
                    out.push(gamma[ch] * h + beta[ch]);
                }
            }
            (xs.clone(), out, xhat, inv_std, stats)
        };
        let var = self.push(
            shape,
            value,
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
        );
        Ok((var, stats))
    }

    /// Inverted dropout: in train mode each element is zeroed with probability
    /// `ratio` and survivors are scaled by `1 / (1 - ratio)`. Identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(
        &self,
        x: Var,
        ratio: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::InvalidArgument(format!(
                "drop ratio {ratio} outside [0, 1)"
            )));
        }
        if mode == Mode::Infer || ratio == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - ratio);
        let (shape, value, mask) = {
            let nodes = self.nodes();
            let xv = &nodes[x.0].value;
            let mask: Vec<f64> = xv
                .iter()
                .map(|_| if rng.gen::<f64>() < ratio { 0.0 } else { keep })
                .collect();
            let value = xv.iter().zip(&mask).map(|(v, m)| v * m).collect();
            (nodes[x.0].shape.clone(), value, mask)
        };
        Ok(self.push(shape, value, Op::Dropout { x, mask }))
    }
}

pub(super) fn batchnorm_backward(
    nodes: &[Node],
    [x, scale, shift]: [Var; 3],
    xhat: &[f64],
    inv_std: &[f64],
    train: bool,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let c = inv_std.len();
    let rows = g.len() / c;
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (gr, xr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ch in 0..c {
            sum_g[ch] += gr[ch];
            sum_gx[ch] += gr[ch] * xr[ch];
        }
    }
    if let Some(ds) = slot(nodes, grads, scale) {
        ds.iter_mut().zip(&sum_gx).for_each(|(d, v)| *d += v);
    }
    if let Some(db) = slot(nodes, grads, shift) {
        db.iter_mut().zip(&sum_g).for_each(|(d, v)| *d += v);
    }
    let gamma = &nodes[scale.0].value;
    if let Some(dx) = slot(nodes, grads, x) {
        let m = rows as f64;
        for ((dr, gr), xr) in dx
            .chunks_exact_mut(c)
            .zip(g.chunks_exact(c))
            .zip(xhat.chunks_exact(c))
        {
            for ch in 0..c {
                let k = gamma[ch] * inv_std[ch];
                dr[ch] += if train {
                    k / m * (m * gr[ch] - sum_g[ch] - xr[ch] * sum_gx[ch])
                } else {
                    k * gr[ch]
                };
            }
        }
    }
}
