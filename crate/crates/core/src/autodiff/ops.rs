use alloc::vec;
use alloc::vec::Vec;

use super::{Node, Op, Tape, Var, PROB_EPS};
use crate::math;
use crate::{Error, Result};

impl Tape {
    /// Matrix product of `a: [m, k]` and `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(out, vec![m, n], Op::MatMul { a, b, m, k, n }, "matmul")
    }

    /// `w: [m, k]` times vector `x: [k]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(Error::shape("matvec", sw, sx));
        }
        let (m, k) = (sw[0], sw[1]);
        let (wv, xv) = (self.value(w), self.value(x));
        let out: Vec<f64> = (0..m)
            .map(|i| wv[i * k..(i + 1) * k].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(out, vec![m], Op::MatVec { w, x, m, k }, "matvec")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[0, 0]));
        }
        let (m, n) = (s[0], s[1]);
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        self.push(out, vec![n, m], Op::Transpose { a, m, n }, "transpose")
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        Ok(self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Sub(a, b), "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Mul(a, b), "mul")
    }

    /// Adds vector `b: [n]` to every row of `a: [m, n]`.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::shape("add_row_broadcast", sa, sb));
        }
        let n = sa[1];
        let shape = sa.to_vec();
        let bv = self.value(b);
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % n])
            .collect();
        self.push(out, shape, Op::AddRowBroadcast { a, b, n }, "add_row_broadcast")
    }

    /// Multiplies row `i` of `a: [m, n]` by `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (sa, ss) = (self.shape(a), self.shape(s));
        if sa.len() != 2 || ss.len() != 1 || sa[0] != ss[0] {
            return Err(Error::shape("scale_rows", sa, ss));
        }
        let n = sa[1];
        let shape = sa.to_vec();
        let sv = self.value(s);
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * sv[i / n])
            .collect();
        self.push(out, shape, Op::ScaleRows { a, s, n }, "scale_rows")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Scale(a, c), "scale")
    }

    fn unary(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, op, name)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), "tanh", math::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", math::sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), "relu", |x| if x > 0.0 { x } else { 0.0 })
    }

    /// Softmax over all elements, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = softmax_values(self.value(a));
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Softmax(a), "softmax")
    }

    /// Concatenates vectors end to end, or stacks rank-2 blocks with equal width.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", &[], &[]));
        };
        let s0 = self.shape(first).to_vec();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = match s0.len() {
                1 => s.len() == 1,
                2 => s.len() == 2 && s[1] == s0[1],
                _ => false,
            };
            if !ok {
                return Err(Error::shape("concat", &s0, s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p));
        }
        let shape = if s0.len() == 1 { vec![rows] } else { vec![rows, s0[1]] };
        self.push(data, shape, Op::Concat(parts.to_vec()), "concat")
    }

    /// Contiguous sub-vector `a[start..start + len]`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || len == 0 || start + len > s[0] {
            return Err(Error::shape("slice", s, &[start, len]));
        }
        let out = self.value(a)[start..start + len].to_vec();
        self.push(out, vec![len], Op::Slice { a, start }, "slice")
    }

    /// Mean over the rows of `a: [m, n]`, giving `[n]`.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("mean_pool", s, &[0, 0]));
        }
        let (m, n) = (s[0], s[1]);
        let av = self.value(a);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += av[i * n + j];
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        self.push(out, vec![n], Op::MeanRows { a, m, n }, "mean_pool")
    }

    /// 2×2 stride-2 max pooling over `[c, h, w]` with even `h`, `w`.
    pub fn max_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(Error::shape("max_pool", s, &[0, 2, 2]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h / 2, w / 2);
        let av = self.value(a);
        let mut out = vec![0.0; c * ho * wo];
        let mut argmax = vec![0usize; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    let mut best = usize::MAX;
                    let mut bv = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = ch * h * w + (2 * y + dy) * w + 2 * x + dx;
                            if av[idx] > bv {
                                bv = av[idx];
                                best = idx;
                            }
                        }
                    }
                    let o = ch * ho * wo + y * wo + x;
                    out[o] = bv;
                    argmax[o] = best;
                }
            }
        }
        self.push(out, vec![c, ho, wo], Op::MaxPool2d { a, argmax }, "max_pool")
    }

    /// 3×3 convolution with zero padding 1 and stride 1.
    ///
    /// `x: [cin, h, w]`, `w: [cout, cin, 3, 3]`, `b: [cout]` → `[cout, h, w]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != 3 || sw[3] != 3 || sb != [sw[0]] {
            return Err(Error::shape("conv2d", sx, sw));
        }
        let (cin, h, wd, cout) = (sx[0], sx[1], sx[2], sw[0]);
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = vec![0.0; cout * h * wd];
        for co in 0..cout {
            let plane = &mut out[co * h * wd..(co + 1) * h * wd];
            plane.iter_mut().for_each(|o| *o = bv[co]);
            for ci in 0..cin {
                let input = &xv[ci * h * wd..(ci + 1) * h * wd];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = wv[((co * cin + ci) * 3 + ky) * 3 + kx];
                        if k == 0.0 {
                            continue;
                        }
                        conv_tap(plane, input, h, wd, ky, kx, |o, i| *o += k * i);
                    }
                }
            }
        }
        self.push(out, vec![cout, h, wd], Op::Conv2d { x, w, b, cin, h, wd, cout }, "conv2d")
    }

    /// Row `row` of an embedding table `[rows, n]`.
    pub fn embedding_lookup(&mut self, table: Var, row: usize) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 || row >= s[0] {
            return Err(Error::shape("embedding_lookup", s, &[row]));
        }
        let n = s[1];
        let out = self.value(table)[row * n..(row + 1) * n].to_vec();
        self.push(out, vec![n], Op::RowSelect { table, row, n }, "embedding_lookup")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        self.push(out, shape.to_vec(), Op::Reshape(a), "reshape")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).iter().sum();
        self.push(vec![s], vec![1], Op::Sum(a), "sum")
    }

    /// Summed binary cross entropy; `target` must be 0/1 valued.
    pub fn bce_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        if self.shape(pred) != [target.len()] {
            return Err(Error::shape("bce_loss", self.shape(pred), &[target.len()]));
        }
        if target.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Validation("bce_loss targets must be 0 or 1".into()));
        }
        let loss = bce_value(self.value(pred), target);
        self.push(
            vec![loss],
            vec![1],
            Op::Bce {
                pred,
                target: target.to_vec(),
            },
            "bce_loss",
        )
    }

    /// Summed squared difference Σ(aᵢ − bᵢ)².
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.binary(a, b, "mse_loss", |x, y| (x - y) * (x - y))?;
        let s = d.iter().sum();
        self.push(vec![s], vec![1], Op::Mse(a, b), "mse_loss")
    }

    /// −log softmax(logits)[target].
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 {
            return Err(Error::shape("cross_entropy", s, &[0]));
        }
        if target >= s[0] {
            return Err(Error::Validation(alloc::format!(
                "cross_entropy target {target} out of range for {} classes",
                s[0]
            )));
        }
        let lv = self.value(logits);
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + math::ln(lv.iter().map(|&x| math::exp(x - max)).sum::<f64>());
        let loss = lse - lv[target];
        let probs = softmax_values(lv);
        self.push(vec![loss], vec![1], Op::CrossEntropy { logits, target, probs }, "cross_entropy")
    }
}

pub(crate) fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| math::exp(v - max)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn bce_value(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * math::ln(p) + (1.0 - y) * math::ln(1.0 - p))
        })
        .sum()
}

/// Applies `f(out, in)` for one kernel tap over the valid region of a padded 3×3 conv.
#[inline]
fn conv_tap(
    out: &mut [f64],
    input: &[f64],
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
    mut f: impl FnMut(&mut f64, f64),
) {
    // input row = y + ky - 1, input col = x + kx - 1
    let y0 = if ky == 0 { 1 } else { 0 };
    let y1 = if ky == 2 { h - 1 } else { h };
    let x0 = if kx == 0 { 1 } else { 0 };
    let x1 = if kx == 2 { w - 1 } else { w };
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let iy = y + ky - 1;
        let orow = &mut out[y * w + x0..y * w + x1];
        let irow = &input[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
        for (o, &i) in orow.iter_mut().zip(irow) {
            f(o, i);
        }
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

pub(super) fn backprop(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(ga) = acc(grads, nodes, a) {
                // ga = g · bᵀ
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, b) {
                // gb = aᵀ · g
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let x = av[r * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += x * y;
                        }
                    }
                }
            }
        }
        &Op::MatVec { w, x, m, k } => {
            let (wv, xv) = (&nodes[w.0].value, &nodes[x.0].value);
            if let Some(gw) = acc(grads, nodes, w) {
                for r in 0..m {
                    let gr = g[r];
                    if gr == 0.0 {
                        continue;
                    }
                    for (o, &xx) in gw[r * k..(r + 1) * k].iter_mut().zip(xv) {
                        *o += gr * xx;
                    }
                }
            }
            if let Some(gx) = acc(grads, nodes, x) {
                for r in 0..m {
                    let gr = g[r];
                    if gr == 0.0 {
                        continue;
                    }
                    for (o, &ww) in gx.iter_mut().zip(&wv[r * k..(r + 1) * k]) {
                        *o += gr * ww;
                    }
                }
            }
        }
        &Op::Transpose { a, m, n } => {
            if let Some(ga) = acc(grads, nodes, a) {
                for r in 0..m {
                    for c in 0..n {
                        ga[r * n + c] += g[c * m + r];
                    }
                }
            }
        }
        &Op::Add(a, b) => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
            }
            if let Some(gb) = acc(grads, nodes, b) {
                gb.iter_mut().zip(g).for_each(|(o, x)| *o += x);
            }
        }
        &Op::Sub(a, b) => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
            }
            if let Some(gb) = acc(grads, nodes, b) {
                gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x);
            }
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(ga) = acc(grads, nodes, a) {
                for j in 0..g.len() {
                    ga[j] += g[j] * bv[j];
                }
            }
            if let Some(gb) = acc(grads, nodes, b) {
                for j in 0..g.len() {
                    gb[j] += g[j] * av[j];
                }
            }
        }
        &Op::AddRowBroadcast { a, b, n } => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
            }
            if let Some(gb) = acc(grads, nodes, b) {
                for (j, x) in g.iter().enumerate() {
                    gb[j % n] += x;
                }
            }
        }
        &Op::ScaleRows { a, s, n } => {
            let (av, sv) = (&nodes[a.0].value, &nodes[s.0].value);
            if let Some(ga) = acc(grads, nodes, a) {
                for (j, x) in g.iter().enumerate() {
                    ga[j] += x * sv[j / n];
                }
            }
            if let Some(gs) = acc(grads, nodes, s) {
                for (j, x) in g.iter().enumerate() {
                    gs[j / n] += x * av[j];
                }
            }
        }
        &Op::Scale(a, c) => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(o, x)| *o += c * x);
            }
        }
        &Op::Tanh(a) => {
            let y = &node.value;
            if let Some(ga) = acc(grads, nodes, a) {
                for j in 0..g.len() {
                    ga[j] += g[j] * (1.0 - y[j] * y[j]);
                }
            }
        }
        &Op::Sigmoid(a) => {
            let y = &node.value;
            if let Some(ga) = acc(grads, nodes, a) {
                for j in 0..g.len() {
                    ga[j] += g[j] * y[j] * (1.0 - y[j]);
                }
            }
        }
        &Op::Relu(a) => {
            let av = &nodes[a.0].value;
            if let Some(ga) = acc(grads, nodes, a) {
                for j in 0..g.len() {
                    if av[j] > 0.0 {
                        ga[j] += g[j];
                    }
                }
            }
        }
        &Op::Softmax(a) => {
            let y = &node.value;
            if let Some(ga) = acc(grads, nodes, a) {
                let dot: f64 = g.iter().zip(y).map(|(x, p)| x * p).sum();
                for j in 0..g.len() {
                    ga[j] += y[j] * (g[j] - dot);
                }
            }
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = nodes[p.0].value.len();
                if let Some(gp) = acc(grads, nodes, p) {
                    gp.iter_mut().zip(&g[off..off + len]).for_each(|(o, x)| *o += x);
                }
                off += len;
            }
        }
        &Op::Slice { a, start } => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga[start..start + g.len()].iter_mut().zip(g).for_each(|(o, x)| *o += x);
            }
        }
        &Op::MeanRows { a, m, n } => {
            if let Some(ga) = acc(grads, nodes, a) {
                let inv = 1.0 / m as f64;
                for r in 0..m {
                    for c in 0..n {
                        ga[r * n + c] += g[c] * inv;
                    }
                }
            }
        }
        Op::MaxPool2d { a, argmax } => {
            if let Some(ga) = acc(grads, nodes, *a) {
                for (o, &src) in argmax.iter().enumerate() {
                    ga[src] += g[o];
                }
            }
        }
        &Op::Conv2d { x, w, b, cin, h, wd, cout } => {
            let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
            let plane = h * wd;
            if let Some(gb) = acc(grads, nodes, b) {
                for co in 0..cout {
                    gb[co] += g[co * plane..(co + 1) * plane].iter().sum::<f64>();
                }
            }
            if let Some(gw) = acc(grads, nodes, w) {
                for co in 0..cout {
                    let gplane = &g[co * plane..(co + 1) * plane];
                    for ci in 0..cin {
                        let input = &xv[ci * plane..(ci + 1) * plane];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let mut s = 0.0;
                                // conv_tap needs a mutable output; walk the same region by hand.
                                let y0 = if ky == 0 { 1 } else { 0 };
                                let y1 = if ky == 2 { h - 1 } else { h };
                                let x0 = if kx == 0 { 1 } else { 0 };
                                let x1 = if kx == 2 { wd - 1 } else { wd };
                                for yy in y0..y1 {
                                    let iy = yy + ky - 1;
                                    let grow = &gplane[yy * wd + x0..yy * wd + x1];
                                    let irow = &input[iy * wd + x0 + kx - 1..iy * wd + x1 + kx - 1];
                                    s += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                                }
                                gw[((co * cin + ci) * 3 + ky) * 3 + kx] += s;
                            }
                        }
                    }
                }
            }
            if let Some(gx) = acc(grads, nodes, x) {
                for co in 0..cout {
                    let gplane = &g[co * plane..(co + 1) * plane];
                    for ci in 0..cin {
                        let ginput = &mut gx[ci * plane..(ci + 1) * plane];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let k = wv[((co * cin + ci) * 3 + ky) * 3 + kx];
                                if k == 0.0 {
                                    continue;
                                }
                                let y0 = if ky == 0 { 1 } else { 0 };
                                let y1 = if ky == 2 { h - 1 } else { h };
                                let x0 = if kx == 0 { 1 } else { 0 };
                                let x1 = if kx == 2 { wd - 1 } else { wd };
                                for yy in y0..y1 {
                                    let iy = yy + ky - 1;
                                    let grow = &gplane[yy * wd + x0..yy * wd + x1];
                                    let irow = &mut ginput[iy * wd + x0 + kx - 1..iy * wd + x1 + kx - 1];
                                    for (o, &gg) in irow.iter_mut().zip(grow) {
                                        *o += k * gg;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        &Op::RowSelect { table, row, n } => {
            if let Some(gt) = acc(grads, nodes, table) {
                gt[row * n..(row + 1) * n].iter_mut().zip(g).for_each(|(o, x)| *o += x);
            }
        }
        &Op::Reshape(a) => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
            }
        }
        &Op::Sum(a) => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        Op::Bce { pred, target } => {
            let pv = &nodes[pred.0].value;
            if let Some(gp) = acc(grads, nodes, *pred) {
                for j in 0..pv.len() {
                    let p = pv[j].clamp(PROB_EPS, 1.0 - PROB_EPS);
                    gp[j] += g[0] * (p - target[j]) / (p * (1.0 - p));
                }
            }
        }
        &Op::Mse(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(ga) = acc(grads, nodes, a) {
                for j in 0..av.len() {
                    ga[j] += 2.0 * (av[j] - bv[j]) * g[0];
                }
            }
            if let Some(gb) = acc(grads, nodes, b) {
                for j in 0..av.len() {
                    gb[j] -= 2.0 * (av[j] - bv[j]) * g[0];
                }
            }
        }
        Op::CrossEntropy { logits, target, probs } => {
            if let Some(gl) = acc(grads, nodes, *logits) {
                for (j, &p) in probs.iter().enumerate() {
                    let y = if j == *target { 1.0 } else { 0.0 };
                    gl[j] += g[0] * (p - y);
                }
            }
        }
    }
}
