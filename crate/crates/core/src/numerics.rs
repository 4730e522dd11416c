//! Dense linear algebra, probability primitives, Fréchet distance and a
//! central-difference gradient oracle.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, LabError, Result};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the simplex sum for [`ProbVector`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "matrix data length {} != {}x{}",
            data.len(),
            rows,
            cols
        );
        ensure!(data.iter().all(|v| v.is_finite()), "matrix entries must be finite");
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        ensure!(
            self.cols == other.rows,
            "matmul shape mismatch {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            x.len() == self.cols,
            "matvec length {} != cols {}",
            x.len(),
            self.cols
        );
        Ok(self.matvec_unchecked(x))
    }

    pub(crate) fn matvec_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).fold(0.0, |acc, (w, v)| acc + w * v))
            .collect()
    }

    /// `selfᵀ · y`.
    pub(crate) fn tmatvec_unchecked(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, yr) in y.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
        out
    }

    /// `self += scale · u vᵀ`.
    pub(crate) fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        for (r, ur) in u.iter().enumerate() {
            let f = scale * ur;
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (d, vc) in row.iter_mut().zip(v) {
                *d += f * vc;
            }
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        ensure!(self.shape() == other.shape(), "add shape mismatch");
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        ensure!(self.shape() == other.shape(), "sub shape mismatch");
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        ensure!(!entries.is_empty(), "probability vector must be non-empty");
        ensure!(
            entries.iter().all(|p| p.is_finite() && *p >= 0.0 && *p <= 1.0 + SIMPLEX_TOL),
            "probability entries must lie in [0, 1]"
        );
        let sum: f64 = entries.iter().sum();
        ensure!(
            (sum - 1.0).abs() <= SIMPLEX_TOL,
            "probability entries sum to {sum}, not 1"
        );
        Ok(Self(entries))
    }

    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        ensure!(index < len, "one-hot index {index} out of range {len}");
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        Ok(Self(v))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        ensure!(len > 0, "uniform distribution needs at least one entry");
        Ok(Self(vec![1.0 / len as f64; len]))
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_on_simplex(&self, tol: f64) -> bool {
        self.0.iter().all(|p| *p >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    /// True when exactly one entry equals 1 and the rest are 0.
    pub fn is_one_hot(&self) -> bool {
        self.0.iter().filter(|p| **p == 1.0).count() == 1
            && self.0.iter().all(|p| *p == 0.0 || *p == 1.0)
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    ensure!(!logits.is_empty(), "softmax of an empty vector");
    ensure!(logits.iter().all(|z| z.is_finite()), "softmax input must be finite");
    Ok(ProbVector(softmax_unchecked(logits)))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    ensure!(!logits.is_empty(), "log_softmax of an empty vector");
    let lse = log_sum_exp(logits);
    Ok(logits.iter().map(|z| z - lse).collect())
}

/// Shannon entropy in nats.
pub fn entropy(p: &ProbVector) -> f64 {
    -p.0.iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

/// `−Σ qᵢ log softmax(z)ᵢ`.
pub fn cross_entropy(logits: &[f64], target: &ProbVector) -> Result<f64> {
    ensure!(
        logits.len() == target.len(),
        "cross_entropy length mismatch: {} logits vs {} targets",
        logits.len(),
        target.len()
    );
    ensure!(!logits.is_empty(), "cross_entropy of an empty vector");
    Ok(cross_entropy_unchecked(logits, target.entries()))
}

pub(crate) fn cross_entropy_unchecked(logits: &[f64], target: &[f64]) -> f64 {
    let lse = log_sum_exp(logits);
    let mut loss = 0.0;
    for (z, q) in logits.iter().zip(target) {
        if *q != 0.0 {
            loss -= q * (z - lse);
        }
    }
    loss.max(0.0)
}

/// `Σ pᵢ log(pᵢ / max(qᵢ, ε))`, with `0 log 0 = 0`.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    ensure!(
        p.len() == q.len(),
        "kl_divergence length mismatch: {} vs {}",
        p.len(),
        q.len()
    );
    let kl: f64 = p
        .0
        .iter()
        .zip(&q.0)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum();
    Ok(kl.max(0.0))
}

/// `μ·q + (1−μ)·p`.
pub fn ema_update(q: &ProbVector, p: &ProbVector, mu: f64) -> Result<ProbVector> {
    ensure!((0.0..=1.0).contains(&mu), "EMA momentum {mu} outside [0, 1]");
    ensure!(q.len() == p.len(), "ema_update length mismatch");
    Ok(ProbVector(
        q.0.iter().zip(&p.0).map(|(qi, pi)| mu * qi + (1.0 - mu) * pi).collect(),
    ))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn sym_eigen(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    ensure!(m.is_square(), "eigendecomposition of a non-square {:?} matrix", m.shape());
    let scale = m.frobenius_norm().max(1.0);
    ensure!(
        m.is_symmetric(1e-8 * scale),
        "eigendecomposition of a non-symmetric matrix"
    );
    let n = m.rows;
    let mut a = m.clone();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = DenseMatrix::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(((0..n).map(|i| a[(i, i)]).collect(), v))
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Eigenvalues in `[-1e-8, 0)` (relative to the matrix scale) are clamped to 0.
pub fn sym_sqrt(m: &DenseMatrix) -> Result<DenseMatrix> {
    ensure!(m.is_square(), "sym_sqrt of a non-square {:?} matrix", m.shape());
    let (vals, vecs) = sym_eigen(m)?;
    let scale = m.frobenius_norm().max(1.0);
    let mut roots = Vec::with_capacity(vals.len());
    for l in vals {
        if l < -1e-8 * scale {
            return Err(LabError::Contract(format!(
                "sym_sqrt of a matrix with negative eigenvalue {l}"
            )));
        }
        roots.push(l.max(0.0).sqrt());
    }
    let n = m.rows;
    let mut out = DenseMatrix::zeros(n, n);
    for (k, r) in roots.iter().enumerate() {
        if *r == 0.0 {
            continue;
        }
        for i in 0..n {
            let f = r * vecs[(i, k)];
            for j in 0..n {
                out[(i, j)] += f * vecs[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Singular values of `m`, descending, from the eigenvalues of `mᵀm`.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    let gram = m.transpose().matmul(m)?;
    let (vals, _) = sym_eigen(&gram)?;
    let mut sv: Vec<f64> = vals.into_iter().map(|l| l.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Fréchet distance between two Gaussians.
pub fn frechet_distance(
    mu1: &[f64],
    cov1: &DenseMatrix,
    mu2: &[f64],
    cov2: &DenseMatrix,
) -> Result<f64> {
    let d = mu1.len();
    ensure!(
        mu2.len() == d && cov1.shape() == (d, d) && cov2.shape() == (d, d),
        "frechet_distance dimension mismatch"
    );
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let s1 = sym_sqrt(cov1)?;
    let mut inner = s1.matmul(cov2)?.matmul(&s1)?;
    // Round-off leaves the product slightly asymmetric.
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (inner[(i, j)] + inner[(j, i)]);
            inner[(i, j)] = avg;
            inner[(j, i)] = avg;
        }
    }
    let cross = sym_sqrt(&inner)?;
    let fd = mean_term + cov1.trace() + cov2.trace() - 2.0 * cross.trace();
    if fd < -1e-8 * (1.0 + cov1.trace() + cov2.trace()) {
        return Err(LabError::Contract(format!("frechet_distance went negative: {fd}")));
    }
    Ok(fd.max(0.0))
}

/// Sample mean and unbiased covariance of a set of equal-length vectors.
pub fn mean_cov(samples: &[Vec<f64>]) -> Result<(Vec<f64>, DenseMatrix)> {
    ensure!(samples.len() >= 2, "need at least two samples for a covariance");
    let d = samples[0].len();
    ensure!(samples.iter().all(|s| s.len() == d), "samples differ in dimension");
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = DenseMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for s in samples {
        for ((c, v), m) in centered.iter_mut().zip(s).zip(&mean) {
            *c = v - m;
        }
        cov.add_outer(1.0, &centered, &centered);
    }
    Ok((mean, cov.scale(1.0 / (n - 1.0))))
}

/// Central finite differences `(f(x+h eᵢ) − f(x−h eᵢ)) / 2h`.
pub fn finite_diff_grad<F, E>(mut f: F, x: &[f64], h: f64) -> std::result::Result<Vec<f64>, E>
where
    F: FnMut(&[f64]) -> std::result::Result<f64, E>,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative L2 error `‖a − b‖ / max(‖b‖, floor)`.
pub fn relative_l2_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}
