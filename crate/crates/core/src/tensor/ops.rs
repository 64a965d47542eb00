use super::tape::{slot, Node, Op, Tape, Var};
use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let nodes = self.nodes();
        if nodes[a.0].shape != nodes[b.0].shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", nodes[a.0].shape, nodes[b.0].shape),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> (Vec<usize>, Vec<f64>) {
        let nodes = self.nodes();
        let value = nodes[a.0]
            .value
            .iter()
            .zip(&nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        (nodes[a.0].shape.clone(), value)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> (Vec<usize>, Vec<f64>) {
        let nodes = self.nodes();
        (
            nodes[x.0].shape.clone(),
            nodes[x.0].value.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (s, v) = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(s, v, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (s, v) = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(s, v, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (s, v) = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(s, v, Op::Mul(a, b)))
    }

    /// `a * x + b` elementwise.
    pub fn affine(&self, x: Var, a: f64, b: f64) -> Var {
        let (s, v) = self.map(x, |t| a * t + b);
        self.push(s, v, Op::Affine { x, a })
    }

    pub fn scale(&self, x: Var, a: f64) -> Var {
        self.affine(x, a, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    /// Adds vector `v[c]` to every row of `m[r, c]`.
    pub fn add_row(&self, m: Var, v: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let (ms, vs) = (&nodes[m.0].shape, &nodes[v.0].shape);
            if ms.len() != 2 || vs.len() != 1 || ms[1] != vs[0] {
                return Err(Error::shape("add_row", format!("{ms:?} + {vs:?}")));
            }
            let c = vs[0];
            let vv = &nodes[v.0].value;
            let value = nodes[m.0]
                .value
                .iter()
                .enumerate()
                .map(|(i, &x)| x + vv[i % c])
                .collect();
            (ms.clone(), value)
        };
        Ok(self.push(shape, value, Op::AddRow { m, v }))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let (s, v) = self.map(x, sigmoid);
        self.push(s, v, Op::Sigmoid(x))
    }

    pub fn tanh(&self, x: Var) -> Var {
        let (s, v) = self.map(x, f64::tanh);
        self.push(s, v, Op::Tanh(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        let (s, v) = self.map(x, |t| t.max(0.0));
        self.push(s, v, Op::Relu(x))
    }

    pub fn abs(&self, x: Var) -> Var {
        let (s, v) = self.map(x, f64::abs);
        self.push(s, v, Op::Abs(x))
    }

    pub fn square(&self, x: Var) -> Var {
        let (s, v) = self.map(x, |t| t * t);
        self.push(s, v, Op::Square(x))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, x: Var) -> Var {
        let total = self.nodes()[x.0].value.iter().sum();
        self.push(Vec::new(), vec![total], Op::Sum(x))
    }

    /// Sum of a list of same-shaped nodes.
    pub fn add_all(&self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// `a[m, k] · b[k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for (o, &bv) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                        *o += aip * bv;
                    }
                }
            }
            (vec![m, n], out)
        };
        Ok(self.push(shape, value, Op::MatMul(a, b)))
    }

    /// `a[m, k] · b[n, k]ᵀ`, i.e. every row of `a` projected by `b`.
    pub fn matmul_t(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
                return Err(Error::shape("matmul_t", format!("{sa:?} x {sb:?}ᵀ")));
            }
            let (m, k, n) = (sa[0], sa[1], sb[0]);
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let ar = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    out[i * n + j] = dot(ar, &bv[j * k..(j + 1) * k]);
                }
            }
            (vec![m, n], out)
        };
        Ok(self.push(shape, value, Op::MatMulT(a, b)))
    }

    /// `w[o, i] · x[i]`.
    pub fn matvec(&self, w: Var, x: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let (sw, sx) = (&nodes[w.0].shape, &nodes[x.0].shape);
            if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
                return Err(Error::shape("matvec", format!("{sw:?} x {sx:?}")));
            }
            let (o, i) = (sw[0], sw[1]);
            let (wv, xv) = (&nodes[w.0].value, &nodes[x.0].value);
            let out = (0..o).map(|r| dot(&wv[r * i..(r + 1) * i], xv)).collect();
            (vec![o], out)
        };
        Ok(self.push(shape, value, Op::MatVec(w, x)))
    }

    /// `x[r]ᵀ · m[r, c]`, a weighted sum of the rows of `m`.
    pub fn vecmat(&self, x: Var, m: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let (sx, sm) = (&nodes[x.0].shape, &nodes[m.0].shape);
            if sx.len() != 1 || sm.len() != 2 || sx[0] != sm[0] {
                return Err(Error::shape("vecmat", format!("{sx:?} x {sm:?}")));
            }
            let (r, c) = (sm[0], sm[1]);
            let (xv, mv) = (&nodes[x.0].value, &nodes[m.0].value);
            let mut out = vec![0.0; c];
            for l in 0..r {
                let w = xv[l];
                for (o, &v) in out.iter_mut().zip(&mv[l * c..(l + 1) * c]) {
                    *o += w * v;
                }
            }
            (vec![c], out)
        };
        Ok(self.push(shape, value, Op::VecMat(x, m)))
    }

    /// Softmax over all elements, stabilized by subtracting the maximum.
    pub fn softmax(&self, x: Var) -> Var {
        let (shape, value) = {
            let nodes = self.nodes();
            (nodes[x.0].shape.clone(), softmax_slice(&nodes[x.0].value))
        };
        self.push(shape, value, Op::Softmax(x))
    }

    /// `ln(max(p[index], floor))` as a scalar.
    pub fn log_pick(&self, p: Var, index: usize, floor: f64) -> Result<Var> {
        let v = {
            let nodes = self.nodes();
            let pv = &nodes[p.0].value;
            let Some(&pi) = pv.get(index) else {
                return Err(Error::shape(
                    "log_pick",
                    format!("index {index} out of range for {} elements", pv.len()),
                ));
            };
            pi.max(floor).ln()
        };
        Ok(self.push(Vec::new(), vec![v], Op::LogPick { p, index, floor }))
    }

    /// Column `index` of `m[r, c]` as a vector of length `r`.
    pub fn column(&self, m: Var, index: usize) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let s = &nodes[m.0].shape;
            if s.len() != 2 || index >= s[1] {
                return Err(Error::shape("column", format!("column {index} of {s:?}")));
            }
            let (r, c) = (s[0], s[1]);
            let mv = &nodes[m.0].value;
            (vec![r], (0..r).map(|i| mv[i * c + index]).collect())
        };
        Ok(self.push(shape, value, Op::Column { m, index }))
    }

    /// Concatenation along the last (depth) axis.
    pub fn concat(&self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        let (shape, value) = {
            let nodes = self.nodes();
            let lead = &nodes[xs[0].0].shape[..nodes[xs[0].0].shape.len() - 1];
            let mut depths = Vec::with_capacity(xs.len());
            for x in xs {
                let s = &nodes[x.0].shape;
                if s.is_empty() || &s[..s.len() - 1] != lead {
                    return Err(Error::shape(
                        "concat",
                        format!("{:?} vs {:?}", nodes[xs[0].0].shape, s),
                    ));
                }
                depths.push(s[s.len() - 1]);
            }
            let total: usize = depths.iter().sum();
            let rows: usize = lead.iter().product();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (x, &d) in xs.iter().zip(&depths) {
                    out.extend_from_slice(&nodes[x.0].value[r * d..(r + 1) * d]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            (shape, out)
        };
        Ok(self.push(shape, value, Op::Concat(xs.to_vec())))
    }

    /// Channels `start..start + len` of the last axis.
    pub fn slice(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let s = &nodes[x.0].shape;
            let Some(&d) = s.last() else {
                return Err(Error::shape("slice", "scalar input"));
            };
            if len == 0 || start + len > d {
                return Err(Error::shape("slice", format!("{start}..{} of {s:?}", start + len)));
            }
            let rows = nodes[x.0].value.len() / d;
            let xv = &nodes[x.0].value;
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&xv[r * d + start..r * d + start + len]);
            }
            let mut shape = s.clone();
            *shape.last_mut().unwrap() = len;
            (shape, out)
        };
        Ok(self.push(shape, value, Op::Slice { x, start, len }))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = {
            let nodes = self.nodes();
            if shape.iter().product::<usize>() != nodes[x.0].value.len() {
                return Err(Error::shape(
                    "reshape",
                    format!("{:?} -> {shape:?}", nodes[x.0].shape),
                ));
            }
            nodes[x.0].value.clone()
        };
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x)))
    }

    /// Entry `index` of the leading axis.
    pub fn select(&self, x: Var, index: usize) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes();
            let s = &nodes[x.0].shape;
            if s.is_empty() || index >= s[0] {
                return Err(Error::shape("select", format!("index {index} of {s:?}")));
            }
            let inner: usize = s[1..].iter().product();
            (
                s[1..].to_vec(),
                nodes[x.0].value[index * inner..(index + 1) * inner].to_vec(),
            )
        };
        Ok(self.push(shape, value, Op::Select { x, index }))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(super) fn backward(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.0].value;
    let shape = |v: Var| &nodes[v.0].shape;
    match &node.op {
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(s) = slot(nodes, grads, v) {
                    s.iter_mut().zip(g).for_each(|(s, d)| *s += d);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(s) = slot(nodes, grads, *a) {
                s.iter_mut().zip(g).for_each(|(s, d)| *s += d);
            }
            if let Some(s) = slot(nodes, grads, *b) {
                s.iter_mut().zip(g).for_each(|(s, d)| *s -= d);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if let Some(s) = slot(nodes, grads, *a) {
                for ((s, d), y) in s.iter_mut().zip(g).zip(bv.iter()) {
                    *s += d * y;
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                for ((s, d), x) in s.iter_mut().zip(g).zip(av.iter()) {
                    *s += d * x;
                }
            }
        }
        Op::Affine { x, a } => {
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut().zip(g).for_each(|(s, d)| *s += a * d);
            }
        }
        Op::AddRow { m, v } => {
            if let Some(s) = slot(nodes, grads, *m) {
                s.iter_mut().zip(g).for_each(|(s, d)| *s += d);
            }
            let c = shape(*v)[0];
            if let Some(s) = slot(nodes, grads, *v) {
                for (i, d) in g.iter().enumerate() {
                    s[i % c] += d;
                }
            }
        }
        Op::Sigmoid(x) => unary(nodes, grads, *x, g, &node.value, |_, y| y * (1.0 - y)),
        Op::Tanh(x) => unary(nodes, grads, *x, g, &node.value, |_, y| 1.0 - y * y),
        Op::Relu(x) => {
            let xv = val(*x);
            unary(nodes, grads, *x, g, xv, |_, x| if x > 0.0 { 1.0 } else { 0.0 })
        }
        Op::Abs(x) => {
            let xv = val(*x);
            unary(nodes, grads, *x, g, xv, |_, x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        }
        Op::Square(x) => {
            let xv = val(*x);
            unary(nodes, grads, *x, g, xv, |_, x| 2.0 * x)
        }
        Op::Sum(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut().for_each(|s| *s += g[0]);
            }
        }
        Op::MatMul(a, b) => {
            let (sa, sb) = (shape(*a), shape(*b));
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let (av, bv) = (val(*a), val(*b));
            if let Some(s) = slot(nodes, grads, *a) {
                // dA = G · Bᵀ
                for i in 0..m {
                    let gr = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        s[i * k + p] += dot(gr, &bv[p * n..(p + 1) * n]);
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                // dB = Aᵀ · G
                for i in 0..m {
                    let gr = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        for (o, d) in s[p * n..(p + 1) * n].iter_mut().zip(gr) {
                            *o += aip * d;
                        }
                    }
                }
            }
        }
        Op::MatMulT(a, b) => {
            let (sa, sb) = (shape(*a), shape(*b));
            let (m, k, n) = (sa[0], sa[1], sb[0]);
            let (av, bv) = (val(*a), val(*b));
            if let Some(s) = slot(nodes, grads, *a) {
                // dA = G · B
                for i in 0..m {
                    for j in 0..n {
                        let d = g[i * n + j];
                        for (o, &b) in s[i * k..(i + 1) * k].iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                            *o += d * b;
                        }
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                // dB = Gᵀ · A
                for i in 0..m {
                    for j in 0..n {
                        let d = g[i * n + j];
                        for (o, &a) in s[j * k..(j + 1) * k].iter_mut().zip(&av[i * k..(i + 1) * k]) {
                            *o += d * a;
                        }
                    }
                }
            }
        }
        Op::MatVec(w, x) => {
            let i = shape(*w)[1];
            let (wv, xv) = (val(*w), val(*x));
            if let Some(s) = slot(nodes, grads, *w) {
                for (r, d) in g.iter().enumerate() {
                    for (o, xi) in s[r * i..(r + 1) * i].iter_mut().zip(xv.iter()) {
                        *o += d * xi;
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *x) {
                for (r, d) in g.iter().enumerate() {
                    for (o, wi) in s.iter_mut().zip(&wv[r * i..(r + 1) * i]) {
                        *o += d * wi;
                    }
                }
            }
        }
        Op::VecMat(x, m) => {
            let c = shape(*m)[1];
            let (xv, mv) = (val(*x), val(*m));
            if let Some(s) = slot(nodes, grads, *x) {
                for (l, o) in s.iter_mut().enumerate() {
                    *o += dot(&mv[l * c..(l + 1) * c], g);
                }
            }
            if let Some(s) = slot(nodes, grads, *m) {
                for (l, w) in xv.iter().enumerate() {
                    for (o, d) in s[l * c..(l + 1) * c].iter_mut().zip(g) {
                        *o += w * d;
                    }
                }
            }
        }
        Op::Softmax(x) => {
            let y = &node.value;
            let inner = dot(g, y);
            if let Some(s) = slot(nodes, grads, *x) {
                for ((o, d), yi) in s.iter_mut().zip(g).zip(y) {
                    *o += yi * (d - inner);
                }
            }
        }
        Op::LogPick { p, index, floor } => {
            let pi = val(*p)[*index];
            if let Some(s) = slot(nodes, grads, *p) {
                if pi > *floor {
                    s[*index] += g[0] / pi;
                }
            }
        }
        Op::Column { m, index } => {
            let c = shape(*m)[1];
            if let Some(s) = slot(nodes, grads, *m) {
                for (r, d) in g.iter().enumerate() {
                    s[r * c + index] += d;
                }
            }
        }
        Op::Concat(xs) => {
            let depths: Vec<usize> = xs.iter().map(|x| *shape(*x).last().unwrap()).collect();
            let total: usize = depths.iter().sum();
            let rows = g.len() / total;
            let mut offset = 0;
            for (x, &d) in xs.iter().zip(&depths) {
                if let Some(s) = slot(nodes, grads, *x) {
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + d];
                        s[r * d..(r + 1) * d]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, v)| *o += v);
                    }
                }
                offset += d;
            }
        }
        Op::Slice { x, start, len } => {
            let d = *shape(*x).last().unwrap();
            if let Some(s) = slot(nodes, grads, *x) {
                let rows = s.len() / d;
                for r in 0..rows {
                    s[r * d + start..r * d + start + len]
                        .iter_mut()
                        .zip(&g[r * len..(r + 1) * len])
                        .for_each(|(o, v)| *o += v);
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
        }
        Op::Select { x, index } => {
            let inner = g.len();
            if let Some(s) = slot(nodes, grads, *x) {
                s[index * inner..(index + 1) * inner]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(o, v)| *o += v);
            }
        }
        other => unreachable!("no generic backward rule for {other:?}"),
    }
}

/// Accumulates `g * f(out, in)` into the gradient of `x`.
fn unary(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    x: Var,
    g: &[f64],
    values: &[f64],
    f: impl Fn(usize, f64) -> f64,
) {
    if let Some(s) = slot(nodes, grads, x) {
        for (i, ((o, d), v)) in s.iter_mut().zip(g).zip(values).enumerate() {
            *o += d * f(i, *v);
        }
    }
}
