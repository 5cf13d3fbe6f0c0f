//! Differentiable objectives with exact gradients and Hessian-vector products.
//!
//! Three model kinds share one interface: multiclass softmax regression, a
//! one-hidden-layer tanh network, and a pure quadratic `1/2 w^T H w`. The
//! classifiers read their inputs from a sparse [`Batch`]; the quadratic
//! ignores the batch.
//!
//! Softmax-regression parameters are laid out input-major: weight `(j, c)`
//! sits at `j * C + c` and the bias of class `c` at `d * C + c`, so
//! `P = (d + 1) C` (7850 for MNIST).

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, LinearOperator, ParamVector, SymMatrix, DENSE_CAP};
use crate::random::seeded;

/// Sparse (CSR) copy of a set of dataset rows together with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset, rows: &[usize]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &r in rows {
            for (j, &x) in ds.input(r).iter().enumerate() {
                if x != 0.0 {
                    indices.push(j as u32);
                    values.push(x);
                }
            }
            indptr.push(indices.len());
        }
        Batch {
            indptr,
            indices,
            values,
            labels: rows.iter().map(|&r| ds.label(r)).collect(),
            input_dim: ds.input_dim(),
        }
    }

    pub fn full(ds: &Dataset) -> Self {
        let rows: Vec<usize> = (0..ds.len()).collect();
        Self::from_dataset(ds, &rows)
    }

    /// A batch with no samples, for objectives that do not read data.
    pub fn empty() -> Self {
        Batch {
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
            labels: Vec::new(),
            input_dim: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SoftmaxRegression,
    Mlp,
    Quadratic,
}

/// The objective being optimized.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    SoftmaxRegression {
        input_dim: usize,
        classes: usize,
    },
    Mlp {
        input_dim: usize,
        hidden: usize,
        classes: usize,
    },
    Quadratic {
        h: SymMatrix,
    },
}

/// Loss, gradient and error rate on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub gradient: ParamVector,
    pub error_rate: f64,
}

/// Loss and error rate without a gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub error_rate: f64,
}

/// Parameter initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases likewise.
    FanIn,
}

pub const DEFAULT_HIDDEN: usize = 32;

impl ModelSpec {
    pub fn softmax_regression(input_dim: usize, classes: usize) -> Self {
        ModelSpec::SoftmaxRegression { input_dim, classes }
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize) -> Self {
        ModelSpec::Mlp {
            input_dim,
            hidden,
            classes,
        }
    }

    pub fn quadratic(h: SymMatrix) -> Self {
        ModelSpec::Quadratic { h }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::SoftmaxRegression { .. } => ModelKind::SoftmaxRegression,
            ModelSpec::Mlp { .. } => ModelKind::Mlp,
            ModelSpec::Quadratic { .. } => ModelKind::Quadratic,
        }
    }

    /// Parameter count `P`.
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::SoftmaxRegression { input_dim, classes } => (input_dim + 1) * classes,
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => input_dim * hidden + hidden + hidden * classes + classes,
            ModelSpec::Quadratic { h } => h.dim(),
        }
    }

    pub fn init_params(&self, init: Init, seed: u64) -> ParamVector {
        let p = self.dim();
        if init == Init::Zeros {
            return ParamVector::zeros(p);
        }
        let mut rng = seeded(seed);
        let mut uniform = |fan_in: usize, n: usize, out: &mut Vec<f64>| {
            let a = 1.0 / (fan_in as f64).sqrt();
            out.extend((0..n).map(|_| rng.random_range(-a..a)));
        };
        let mut w = Vec::with_capacity(p);
        match self {
            ModelSpec::SoftmaxRegression { input_dim, classes } => {
                uniform(*input_dim, p, &mut w);
                let _ = classes;
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                uniform(*input_dim, input_dim * hidden + hidden, &mut w);
                uniform(*hidden, hidden * classes + classes, &mut w);
            }
            ModelSpec::Quadratic { .. } => uniform(p, p, &mut w),
        }
        ParamVector::from(w)
    }

    fn check(&self, w: &[f64], batch: &Batch) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: w.len(),
            });
        }
        let want = match self {
            ModelSpec::SoftmaxRegression { input_dim, .. } | ModelSpec::Mlp { input_dim, .. } => {
                *input_dim
            }
            ModelSpec::Quadratic { .. } => return Ok(()),
        };
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if batch.input_dim != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: batch.input_dim,
            });
        }
        Ok(())
    }

    /// Mean cross-entropy (or `1/2 w^T H w`) and its gradient.
    pub fn batch_loss_grad(&self, w: &[f64], batch: &Batch) -> Result<LossEval> {
        self.check(w, batch)?;
        let eval = match self {
            ModelSpec::SoftmaxRegression { input_dim, classes } => {
                softmax_loss_grad(*input_dim, *classes, w, batch, true)
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => Mlp::new(*input_dim, *hidden, *classes).loss_grad(w, batch, true),
            ModelSpec::Quadratic { h } => {
                let mut g = ParamVector::zeros(h.dim());
                h.apply_into(w, &mut g);
                LossEval {
                    loss: 0.5 * dot(w, &g),
                    gradient: g,
                    error_rate: 0.0,
                }
            }
        };
        if !eval.loss.is_finite() || !eval.gradient.is_finite() {
            return Err(Error::NonFinite("loss or gradient".into()));
        }
        Ok(eval)
    }

    pub fn evaluate(&self, w: &[f64], batch: &Batch) -> Result<Evaluation> {
        self.check(w, batch)?;
        let eval = match self {
            ModelSpec::SoftmaxRegression { input_dim, classes } => {
                softmax_loss_grad(*input_dim, *classes, w, batch, false)
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => Mlp::new(*input_dim, *hidden, *classes).loss_grad(w, batch, false),
            ModelSpec::Quadratic { .. } => return self.batch_loss_grad(w, batch).map(|e| e.into()),
        };
        if !eval.loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok(eval.into())
    }

    /// The batch Hessian at `w` as a matrix-free operator. Forward-pass
    /// quantities are computed once and reused for every product.
    pub fn curvature<'a>(&'a self, w: &'a [f64], batch: &'a Batch) -> Result<Curvature<'a>> {
        self.check(w, batch)?;
        let inner = match self {
            ModelSpec::SoftmaxRegression { input_dim, classes } => {
                let probs = softmax_probs(*input_dim, *classes, w, batch);
                if probs.iter().any(|p| !p.is_finite()) {
                    return Err(Error::NonFinite("softmax probabilities".into()));
                }
                CurvatureInner::Softmax {
                    input_dim: *input_dim,
                    classes: *classes,
                    batch,
                    probs,
                }
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                let net = Mlp::new(*input_dim, *hidden, *classes);
                let cache = net.forward(w, batch);
                if cache.iter().any(|c| c.probs.iter().any(|p| !p.is_finite())) {
                    return Err(Error::NonFinite("network activations".into()));
                }
                CurvatureInner::Mlp {
                    net,
                    w,
                    batch,
                    cache,
                }
            }
            ModelSpec::Quadratic { h } => CurvatureInner::Quadratic(h),
        };
        Ok(Curvature {
            dim: self.dim(),
            inner,
        })
    }

    /// `Hess L_batch(w) v`.
    pub fn hvp(&self, w: &[f64], batch: &Batch, v: &[f64]) -> Result<ParamVector> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("direction vector".into()));
        }
        let op = self.curvature(w, batch)?;
        let mut y = ParamVector::zeros(self.dim());
        op.apply(v, &mut y)?;
        Ok(y)
    }

    /// Dense batch Hessian, column `i` being the product with `e_i`.
    pub fn dense_hessian(&self, w: &[f64], batch: &Batch) -> Result<SymMatrix> {
        let p = self.dim();
        if p > DENSE_CAP {
            return Err(Error::DenseCapExceeded {
                dim: p,
                cap: DENSE_CAP,
            });
        }
        if let ModelSpec::Quadratic { h } = self {
            return Ok(h.clone());
        }
        let op = self.curvature(w, batch)?;
        let mut cols = vec![0.0; p * p];
        let mut e = vec![0.0; p];
        for i in 0..p {
            e[i] = 1.0;
            op.apply(&e, &mut cols[i * p..(i + 1) * p])?;
            e[i] = 0.0;
        }
        // Average the two triangles so the result is exactly symmetric.
        for i in 0..p {
            for j in 0..i {
                let avg = 0.5 * (cols[i * p + j] + cols[j * p + i]);
                cols[i * p + j] = avg;
                cols[j * p + i] = avg;
            }
        }
        SymMatrix::from_row_major(p, cols)
    }
}

impl From<LossEval> for Evaluation {
    fn from(e: LossEval) -> Self {
        Evaluation {
            loss: e.loss,
            error_rate: e.error_rate,
        }
    }
}

/// Matrix-free batch Hessian returned by [`ModelSpec::curvature`].
pub struct Curvature<'a> {
    dim: usize,
    inner: CurvatureInner<'a>,
}

enum CurvatureInner<'a> {
    Softmax {
        input_dim: usize,
        classes: usize,
        batch: &'a Batch,
        probs: Vec<f64>,
    },
    Mlp {
        net: Mlp,
        w: &'a [f64],
        batch: &'a Batch,
        cache: Vec<MlpSample>,
    },
    Quadratic(&'a SymMatrix),
}

impl LinearOperator for Curvature<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64], y: &mut [f64]) -> Result<()> {
        if v.len() != self.dim || y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len().min(y.len()),
            });
        }
        match &self.inner {
            CurvatureInner::Softmax {
                input_dim,
                classes,
                batch,
                probs,
            } => softmax_hvp(*input_dim, *classes, batch, probs, v, y),
            CurvatureInner::Mlp {
                net,
                w,
                batch,
                cache,
            } => net.hvp(w, batch, cache, v, y),
            CurvatureInner::Quadratic(h) => h.apply_into(v, y),
        }
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Hessian-vector product".into()));
        }
        Ok(())
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in z.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    z.iter_mut().for_each(|x| *x /= s);
}

/// Cross-entropy of logits `z` against `label`, and whether the argmax misses.
fn cross_entropy(z: &[f64], label: usize) -> (f64, bool) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    let argmax = z
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0;
    (lse - z[label], argmax != label)
}

fn softmax_logits(
    input_dim: usize,
    classes: usize,
    w: &[f64],
    idx: &[u32],
    val: &[f64],
    z: &mut [f64],
) {
    let c = classes;
    z.copy_from_slice(&w[input_dim * c..(input_dim + 1) * c]);
    for (&j, &x) in idx.iter().zip(val) {
        let j = j as usize;
        axpy(x, &w[j * c..(j + 1) * c], z);
    }
}

fn softmax_probs(input_dim: usize, classes: usize, w: &[f64], batch: &Batch) -> Vec<f64> {
    let mut probs = vec![0.0; batch.len() * classes];
    for (i, z) in probs.chunks_exact_mut(classes).enumerate() {
        let (idx, val) = batch.row(i);
        softmax_logits(input_dim, classes, w, idx, val, z);
        softmax_in_place(z);
    }
    probs
}

fn softmax_loss_grad(
    input_dim: usize,
    classes: usize,
    w: &[f64],
    batch: &Batch,
    with_grad: bool,
) -> LossEval {
    let c = classes;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; if with_grad { w.len() } else { 0 }];
    let mut z = vec![0.0; c];
    let mut loss = 0.0;
    let mut errors = 0usize;
    for i in 0..batch.len() {
        let (idx, val) = batch.row(i);
        let label = batch.labels[i];
        softmax_logits(input_dim, c, w, idx, val, &mut z);
        let (l, wrong) = cross_entropy(&z, label);
        loss += l;
        errors += wrong as usize;
        if with_grad {
            softmax_in_place(&mut z);
            z[label] -= 1.0;
            z.iter_mut().for_each(|r| *r /= n);
            for (&j, &x) in idx.iter().zip(val) {
                let j = j as usize;
                axpy(x, &z, &mut grad[j * c..(j + 1) * c]);
            }
            axpy(1.0, &z, &mut grad[input_dim * c..]);
        }
    }
    LossEval {
        loss: loss / n,
        gradient: ParamVector::from(grad),
        error_rate: errors as f64 / n,
    }
}

fn softmax_hvp(
    input_dim: usize,
    classes: usize,
    batch: &Batch,
    probs: &[f64],
    v: &[f64],
    y: &mut [f64],
) {
    let c = classes;
    let n = batch.len() as f64;
    y.iter_mut().for_each(|x| *x = 0.0);
    let mut u = vec![0.0; c];
    for (i, p) in probs.chunks_exact(c).enumerate() {
        let (idx, val) = batch.row(i);
        softmax_logits(input_dim, c, v, idx, val, &mut u);
        let pu = dot(p, &u);
        for (uc, pc) in u.iter_mut().zip(p) {
            *uc = pc * (*uc - pu) / n;
        }
        for (&j, &x) in idx.iter().zip(val) {
            let j = j as usize;
            axpy(x, &u, &mut y[j * c..(j + 1) * c]);
        }
        axpy(1.0, &u, &mut y[input_dim * c..]);
    }
}

/// One hidden tanh layer. Parameters: `W1` (input-major, `d x h`), `b1`,
/// `W2` (`h x C`), `b2`.
#[derive(Debug, Clone, Copy)]
struct Mlp {
    d: usize,
    h: usize,
    c: usize,
}

struct MlpSample {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

struct MlpParams<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

impl Mlp {
    fn new(d: usize, h: usize, c: usize) -> Self {
        Mlp { d, h, c }
    }

    fn offsets(&self) -> [usize; 4] {
        let a = self.d * self.h;
        let b = a + self.h;
        let c = b + self.h * self.c;
        [0, a, b, c]
    }

    fn split<'a>(&self, w: &'a [f64]) -> MlpParams<'a> {
        let [_, a, b, c] = self.offsets();
        MlpParams {
            w1: &w[..a],
            b1: &w[a..b],
            w2: &w[b..c],
            b2: &w[c..],
        }
    }

    fn pre_activation(&self, p: &MlpParams, idx: &[u32], val: &[f64], out: &mut [f64]) {
        out.copy_from_slice(p.b1);
        for (&j, &x) in idx.iter().zip(val) {
            let j = j as usize;
            axpy(x, &p.w1[j * self.h..(j + 1) * self.h], out);
        }
    }

    fn output(&self, p: &MlpParams, hidden: &[f64], out: &mut [f64]) {
        out.copy_from_slice(p.b2);
        for (k, &hk) in hidden.iter().enumerate() {
            axpy(hk, &p.w2[k * self.c..(k + 1) * self.c], out);
        }
    }

    fn forward(&self, w: &[f64], batch: &Batch) -> Vec<MlpSample> {
        let p = self.split(w);
        (0..batch.len())
            .map(|i| {
                let (idx, val) = batch.row(i);
                let mut hidden = vec![0.0; self.h];
                self.pre_activation(&p, idx, val, &mut hidden);
                hidden.iter_mut().for_each(|a| *a = a.tanh());
                let mut probs = vec![0.0; self.c];
                self.output(&p, &hidden, &mut probs);
                softmax_in_place(&mut probs);
                MlpSample { hidden, probs }
            })
            .collect()
    }

    fn loss_grad(&self, w: &[f64], batch: &Batch, with_grad: bool) -> LossEval {
        let p = self.split(w);
        let [_, o_b1, o_w2, o_b2] = self.offsets();
        let n = batch.len() as f64;
        let mut grad = vec![0.0; if with_grad { w.len() } else { 0 }];
        let mut hidden = vec![0.0; self.h];
        let mut z = vec![0.0; self.c];
        let mut dh = vec![0.0; self.h];
        let mut loss = 0.0;
        let mut errors = 0usize;
        for i in 0..batch.len() {
            let (idx, val) = batch.row(i);
            let label = batch.labels[i];
            self.pre_activation(&p, idx, val, &mut hidden);
            hidden.iter_mut().for_each(|a| *a = a.tanh());
            self.output(&p, &hidden, &mut z);
            let (l, wrong) = cross_entropy(&z, label);
            loss += l;
            errors += wrong as usize;
            if !with_grad {
                continue;
            }
            softmax_in_place(&mut z);
            z[label] -= 1.0;
            z.iter_mut().for_each(|r| *r /= n);
            for (k, &hk) in hidden.iter().enumerate() {
                axpy(
                    hk,
                    &z,
                    &mut grad[o_w2 + k * self.c..o_w2 + (k + 1) * self.c],
                );
                dh[k] = dot(&p.w2[k * self.c..(k + 1) * self.c], &z) * (1.0 - hk * hk);
            }
            axpy(1.0, &z, &mut grad[o_b2..]);
            for (&j, &x) in idx.iter().zip(val) {
                let j = j as usize;
                axpy(x, &dh, &mut grad[j * self.h..(j + 1) * self.h]);
            }
            axpy(1.0, &dh, &mut grad[o_b1..o_w2]);
        }
        LossEval {
            loss: loss / n,
            gradient: ParamVector::from(grad),
            error_rate: errors as f64 / n,
        }
    }

    /// Exact Hessian-vector product by forward-mode perturbation of the
    /// backward pass.
    fn hvp(&self, w: &[f64], batch: &Batch, cache: &[MlpSample], v: &[f64], y: &mut [f64]) {
        let p = self.split(w);
        let dv = self.split(v);
        let [_, o_b1, o_w2, o_b2] = self.offsets();
        let (h, c) = (self.h, self.c);
        let n = batch.len() as f64;
        y.iter_mut().for_each(|x| *x = 0.0);
        let mut ra = vec![0.0; h];
        let mut rh = vec![0.0; h];
        let mut rz = vec![0.0; c];
        let mut dz = vec![0.0; c];
        let mut rdz = vec![0.0; c];
        let mut rda = vec![0.0; h];
        for (i, s) in cache.iter().enumerate() {
            let (idx, val) = batch.row(i);
            let label = batch.labels[i];
            self.pre_activation(&dv, idx, val, &mut ra);
            for k in 0..h {
                rh[k] = (1.0 - s.hidden[k] * s.hidden[k]) * ra[k];
            }
            // R(z) = V2^T hidden + W2^T R(hidden) + c2
            rz.copy_from_slice(dv.b2);
            for k in 0..h {
                axpy(s.hidden[k], &dv.w2[k * c..(k + 1) * c], &mut rz);
                axpy(rh[k], &p.w2[k * c..(k + 1) * c], &mut rz);
            }
            let prz = dot(&s.probs, &rz);
            for j in 0..c {
                dz[j] = (s.probs[j] - if j == label { 1.0 } else { 0.0 }) / n;
                rdz[j] = s.probs[j] * (rz[j] - prz) / n;
            }
            for k in 0..h {
                let hk = s.hidden[k];
                let w2k = &p.w2[k * c..(k + 1) * c];
                let v2k = &dv.w2[k * c..(k + 1) * c];
                let yk = &mut y[o_w2 + k * c..o_w2 + (k + 1) * c];
                axpy(rh[k], &dz, yk);
                axpy(hk, &rdz, yk);
                let dh = dot(w2k, &dz);
                let rdh = dot(v2k, &dz) + dot(w2k, &rdz);
                let g = 1.0 - hk * hk;
                rda[k] = rdh * g - 2.0 * dh * hk * rh[k];
            }
            axpy(1.0, &rdz, &mut y[o_b2..]);
            for (&j, &x) in idx.iter().zip(val) {
                let j = j as usize;
                axpy(x, &rda, &mut y[j * h..(j + 1) * h]);
            }
            axpy(1.0, &rda, &mut y[o_b1..o_w2]);
        }
    }
}
