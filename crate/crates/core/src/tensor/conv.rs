use super::tape::{slot, Node, Op, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`, zero padding split with the smaller half on top/left.
    Same,
    /// No padding.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    #[default]
    Max,
    Avg,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    fh: usize,
    fw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    stride: (usize, usize),
    pad: (usize, usize),
}

/// Splits `[h, w, c]` or `[n, h, w, c]` into `(n, h, w, c, batched)`.
fn spatial_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c, false)),
        [n, h, w, c] => Ok((n, h, w, c, true)),
        _ => Err(Error::shape(op, format!("expected [h, w, c] or [n, h, w, c], got {shape:?}"))),
    }
}

fn out_extent(input: usize, filter: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + filter).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => (filter <= input).then(|| ((input - filter) / stride + 1, 0)),
    }
}

impl Tape {
    /// 2-D cross-correlation of channel-last `input` with `kernels[fh, fw, c_in, c_out]`.
    pub fn conv2d(
        &self,
        input: Var,
        kernels: Var,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var> {
        let (shape, value, geom) = {
            let nodes = self.nodes();
            let (xs, ks) = (&nodes[input.0].shape, &nodes[kernels.0].shape);
            let (batch, h, w, cin, batched) = spatial_dims("conv2d", xs)?;
            let &[fh, fw, kcin, cout] = ks.as_slice() else {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernels must be [fh, fw, c_in, c_out], got {ks:?}"),
                ));
            };
            if kcin != cin {
                return Err(Error::shape(
                    "conv2d",
                    format!("input {xs:?} has {cin} channels but kernels {ks:?} expect {kcin}"),
                ));
            }
            if stride.0 == 0 || stride.1 == 0 {
                return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
            }
            let (Some((oh, pt)), Some((ow, pl))) = (
                out_extent(h, fh, stride.0, padding),
                out_extent(w, fw, stride.1, padding),
            ) else {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {fh}x{fw} exceeds input {h}x{w} under valid padding"),
                ));
            };
            let geom = ConvGeom {
                batch,
                h,
                w,
                cin,
                fh,
                fw,
                cout,
                oh,
                ow,
                stride,
                pad: (pt, pl),
            };
            let out = conv_forward(&nodes[input.0].value, &nodes[kernels.0].value, &geom);
            let shape = if batched {
                vec![batch, oh, ow, cout]
            } else {
                vec![oh, ow, cout]
            };
            (shape, out, geom)
        };
        Ok(self.push(
            shape,
            value,
            Op::Conv2d {
                x: input,
                k: kernels,
                geom,
            },
        ))
    }

    /// 2×2 pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn pool2d(&self, input: Var, mode: PoolMode) -> Result<Var> {
        let (shape, value, route) = {
            let nodes = self.nodes();
            let xs = &nodes[input.0].shape;
            let (batch, h, w, c, batched) = spatial_dims("pool2d", xs)?;
            if h < 2 || w < 2 {
                return Err(Error::shape(
                    "pool2d",
                    format!("2x2 window larger than input {h}x{w}"),
                ));
            }
            let (oh, ow) = (h / 2, w / 2);
            let xv = &nodes[input.0].value;
            let mut out = Vec::with_capacity(batch * oh * ow * c);
            let mut route = Vec::new();
            for b in 0..batch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let idx = |dy: usize, dx: usize| {
                                ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch
                            };
                            let window = [idx(0, 0), idx(0, 1), idx(1, 0), idx(1, 1)];
                            match mode {
                                PoolMode::Max => {
                                    let mut best = window[0];
                                    for &i in &window[1..] {
                                        if xv[i] > xv[best] {
                                            best = i;
                                        }
                                    }
                                    out.push(xv[best]);
                                    route.push(best);
                                }
                                PoolMode::Avg => {
                                    out.push(window.iter().map(|&i| xv[i]).sum::<f64>() / 4.0);
                                    route.extend_from_slice(&window);
                                }
                            }
                        }
                    }
                }
            }
            let shape = if batched {
                vec![batch, oh, ow, c]
            } else {
                vec![oh, ow, c]
            };
            (shape, out, route)
        };
        Ok(self.push(
            shape,
            value,
            Op::Pool {
                x: input,
                mode,
                route,
            },
        ))
    }
}

fn conv_forward(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.oh * g.ow * g.cout];
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o0 = ((b * g.oh + oy) * g.ow + ox) * g.cout;
                let orow = &mut out[o0..o0 + g.cout];
                for_each_tap(g, oy, ox, |ky, kx, iy, ix| {
                    let x0 = ((b * g.h + iy) * g.w + ix) * g.cin;
                    for ci in 0..g.cin {
                        let xv = x[x0 + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let k0 = ((ky * g.fw + kx) * g.cin + ci) * g.cout;
                        for (o, &kv) in orow.iter_mut().zip(&k[k0..k0 + g.cout]) {
                            *o += xv * kv;
                        }
                    }
                });
            }
        }
    }
    out
}

/// Visits every kernel tap of output cell `(oy, ox)` that lands inside the input.
#[inline]
fn for_each_tap(g: &ConvGeom, oy: usize, ox: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    for ky in 0..g.fh {
        let iy = (oy * g.stride.0 + ky) as isize - g.pad.0 as isize;
        if iy < 0 || iy >= g.h as isize {
            continue;
        }
        for kx in 0..g.fw {
            let ix = (ox * g.stride.1 + kx) as isize - g.pad.1 as isize;
            if ix < 0 || ix >= g.w as isize {
                continue;
            }
            f(ky, kx, iy as usize, ix as usize);
        }
    }
}

pub(super) fn conv2d_backward(
    nodes: &[Node],
    x: Var,
    k: Var,
    geom: &ConvGeom,
    grad: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let g = geom;
    let (xv, kv) = (&nodes[x.0].value, &nodes[k.0].value);
    if let Some(dx) = slot(nodes, grads, x) {
        for b in 0..g.batch {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let o0 = ((b * g.oh + oy) * g.ow + ox) * g.cout;
                    let go = &grad[o0..o0 + g.cout];
                    for_each_tap(g, oy, ox, |ky, kx, iy, ix| {
                        let x0 = ((b * g.h + iy) * g.w + ix) * g.cin;
                        for ci in 0..g.cin {
                            let k0 = ((ky * g.fw + kx) * g.cin + ci) * g.cout;
                            dx[x0 + ci] += super::ops::dot(go, &kv[k0..k0 + g.cout]);
                        }
                    });
                }
            }
        }
    }
    if let Some(dk) = slot(nodes, grads, k) {
        for b in 0..g.batch {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let o0 = ((b * g.oh + oy) * g.ow + ox) * g.cout;
                    let go = &grad[o0..o0 + g.cout];
                    for_each_tap(g, oy, ox, |ky, kx, iy, ix| {
                        let x0 = ((b * g.h + iy) * g.w + ix) * g.cin;
                        for ci in 0..g.cin {
                            let xval = xv[x0 + ci];
                            if xval == 0.0 {
                                continue;
                            }
                            let k0 = ((ky * g.fw + kx) * g.cin + ci) * g.cout;
                            for (d, &gv) in dk[k0..k0 + g.cout].iter_mut().zip(go) {
                                *d += xval * gv;
                            }
                        }
                    });
                }
            }
        }
    }
}

pub(super) fn pool_backward(
    nodes: &[Node],
    x: Var,
    mode: PoolMode,
    route: &[usize],
    grad: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if let Some(dx) = slot(nodes, grads, x) {
        match mode {
            PoolMode::Max => {
                for (&i, &gv) in route.iter().zip(grad) {
                    dx[i] += gv;
                }
            }
            PoolMode::Avg => {
                for (window, &gv) in route.chunks_exact(4).zip(grad) {
                    for &i in window {
                        dx[i] += gv / 4.0;
                    }
                }
            }
        }
    }
}
