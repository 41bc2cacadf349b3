//! L2-regularized logistic loss
//!
//! `F(x) = mean_i log(1 + exp(-y_i x.z_i)) + (lambda/2) |x|^2`
//!
//! with value, gradient, per-sample gradients and exact Hessian-vector
//! products over the whole dataset or any multiset of sample indices. Every
//! data pass touches each stored nonzero once, so a Hessian-vector product
//! costs the same as a gradient.

use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::vecops::{dot, norm_sq};

/// Which samples an evaluation averages over. Indices may repeat.
#[derive(Debug, Clone, Copy)]
pub enum Subset<'a> {
    All,
    Indices(&'a [usize]),
}

impl<'a> Subset<'a> {
    fn len(&self, data: &SparseDataset) -> usize {
        match self {
            Subset::All => data.n_samples(),
            Subset::Indices(idx) => idx.len(),
        }
    }

    fn validate(&self, data: &SparseDataset) -> Result<usize> {
        let n = self.len(data);
        if n == 0 {
            return Err(Error::EmptySubset);
        }
        if let Subset::Indices(idx) = self {
            if let Some(&bad) = idx.iter().find(|&&i| i >= data.n_samples()) {
                return Err(Error::IndexOutOfRange {
                    index: bad,
                    len: data.n_samples(),
                });
            }
        }
        Ok(n)
    }

    fn for_each(&self, data: &SparseDataset, mut f: impl FnMut(usize)) {
        match self {
            Subset::All => (0..data.n_samples()).for_each(&mut f),
            Subset::Indices(idx) => idx.iter().copied().for_each(&mut f),
        }
    }

    pub fn to_indices(&self, data: &SparseDataset) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len(data));
        self.for_each(data, |i| out.push(i));
        out
    }
}

/// Parameter vector plus regularization weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub x: Vec<f64>,
    pub lambda: f64,
}

impl ModelState {
    pub fn new(x: Vec<f64>, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("parameter vector is not finite".into()));
        }
        Ok(Self { x, lambda })
    }

    pub fn zeros(n_features: usize, lambda: f64) -> Result<Self> {
        Self::new(vec![0.0; n_features], lambda)
    }

    fn check_dim(&self, data: &SparseDataset) -> Result<()> {
        if self.x.len() != data.n_features() {
            return Err(Error::DimensionMismatch {
                expected: data.n_features(),
                got: self.x.len(),
            });
        }
        Ok(())
    }
}

/// Curvature bounds of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// Strong convexity constant `m` (the regularization weight).
    pub m_lower: f64,
    /// Averaged smoothness bound `lambda + sum_i |z_i|^2 / (4N)`.
    pub m_upper: f64,
    /// Per-sample smoothness bound `lambda + max_i |z_i|^2 / 4`, which also
    /// bounds every sub-sampled Hessian.
    pub m_upper_per_sample: f64,
    /// Gradient-norm bound; zero until measured along a run.
    pub gamma: f64,
    pub kappa: f64,
}

impl ProblemConstants {
    pub fn new(m_lower: f64, m_upper: f64, gamma: f64) -> Result<Self> {
        if !(m_lower > 0.0 && m_upper >= m_lower && m_upper.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < m <= M, got m={m_lower}, M={m_upper}"
            )));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self {
            m_lower,
            m_upper,
            m_upper_per_sample: m_upper,
            gamma,
            kappa: m_upper / m_lower,
        })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(u))` without overflow.
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `sigma'(u) = sigma(u) * sigma(-u)`
fn sigmoid_prime(u: f64) -> f64 {
    sigmoid(u) * sigmoid(-u)
}

fn margin(state: &ModelState, data: &SparseDataset, i: usize) -> f64 {
    data.label(i) * data.row(i).dot(&state.x)
}

fn prepare(state: &ModelState, data: &SparseDataset, subset: Subset<'_>) -> Result<usize> {
    state.check_dim(data)?;
    subset.validate(data)
}

pub fn loss(state: &ModelState, data: &SparseDataset, subset: Subset<'_>) -> Result<f64> {
    let n = prepare(state, data, subset)?;
    let mut total = 0.0;
    subset.for_each(data, |i| total += softplus(-margin(state, data, i)));
    Ok(total / n as f64 + 0.5 * state.lambda * norm_sq(&state.x))
}

pub fn grad(state: &ModelState, data: &SparseDataset, subset: Subset<'_>) -> Result<Vec<f64>> {
    let n = prepare(state, data, subset)?;
    let mut g = vec![0.0; state.x.len()];
    subset.for_each(data, |i| {
        let y = data.label(i);
        let c = -y * sigmoid(-margin(state, data, i));
        data.row(i).add_scaled_to(c, &mut g);
    });
    let inv = 1.0 / n as f64;
    for (gj, xj) in g.iter_mut().zip(&state.x) {
        *gj = *gj * inv + state.lambda * xj;
    }
    Ok(g)
}

/// Per-sample gradients `grad F_i(x) = c_i z_i + lambda x`, stored as the
/// scalar coefficients `c_i` plus the shared regularization term.
#[derive(Debug, Clone)]
pub struct PerSampleGrads<'a> {
    data: &'a SparseDataset,
    indices: Vec<usize>,
    coeffs: Vec<f64>,
    reg: Vec<f64>,
    reg_norm_sq: f64,
}

impl<'a> PerSampleGrads<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.reg.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// The `lambda x` term shared by every entry.
    pub fn regularization(&self) -> &[f64] {
        &self.reg
    }

    /// Reconstructs entry `k` as a dense vector.
    pub fn dense(&self, k: usize) -> Vec<f64> {
        let mut out = self.reg.clone();
        self.data.row(self.indices[k]).add_scaled_to(self.coeffs[k], &mut out);
        out
    }

    pub fn dot(&self, k: usize, v: &[f64]) -> f64 {
        self.coeffs[k] * self.data.row(self.indices[k]).dot(v) + dot(&self.reg, v)
    }

    pub fn sq_norm(&self, k: usize) -> f64 {
        let row = self.data.row(self.indices[k]);
        let c = self.coeffs[k];
        c * c * row.norm_sq() + 2.0 * c * row.dot(&self.reg) + self.reg_norm_sq
    }

    /// Mean of the entries, i.e. the subset gradient.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (&i, &c) in self.indices.iter().zip(&self.coeffs) {
            self.data.row(i).add_scaled_to(c, &mut out);
        }
        let inv = 1.0 / self.len() as f64;
        for (o, r) in out.iter_mut().zip(&self.reg) {
            *o = *o * inv + r;
        }
        out
    }
}

pub fn per_sample_grads<'a>(
    state: &ModelState,
    data: &'a SparseDataset,
    subset: Subset<'_>,
) -> Result<PerSampleGrads<'a>> {
    prepare(state, data, subset)?;
    let indices = subset.to_indices(data);
    let coeffs = indices
        .iter()
        .map(|&i| -data.label(i) * sigmoid(-margin(state, data, i)))
        .collect();
    let reg: Vec<f64> = state.x.iter().map(|v| state.lambda * v).collect();
    let reg_norm_sq = norm_sq(&reg);
    Ok(PerSampleGrads {
        data,
        indices,
        coeffs,
        reg,
        reg_norm_sq,
    })
}

/// Exact product of the subset Hessian with `v`.
pub fn hvp(
    state: &ModelState,
    data: &SparseDataset,
    subset: Subset<'_>,
    v: &[f64],
) -> Result<Vec<f64>> {
    let n = prepare(state, data, subset)?;
    if v.len() != state.x.len() {
        return Err(Error::DimensionMismatch {
            expected: state.x.len(),
            got: v.len(),
        });
    }
    let mut out = vec![0.0; v.len()];
    subset.for_each(data, |i| {
        let row = data.row(i);
        let w = sigmoid_prime(margin(state, data, i));
        row.add_scaled_to(w * row.dot(v), &mut out);
    });
    let inv = 1.0 / n as f64;
    for (o, vj) in out.iter_mut().zip(v) {
        *o = *o * inv + state.lambda * vj;
    }
    Ok(out)
}

/// Per-sample curvatures `v' H_i v = sigma'(m_i) (z_i.v)^2 + lambda |v|^2`.
pub fn per_sample_curvature(
    state: &ModelState,
    data: &SparseDataset,
    subset: Subset<'_>,
    v: &[f64],
) -> Result<Vec<f64>> {
    prepare(state, data, subset)?;
    if v.len() != state.x.len() {
        return Err(Error::DimensionMismatch {
            expected: state.x.len(),
            got: v.len(),
        });
    }
    let reg = state.lambda * norm_sq(v);
    let mut out = Vec::with_capacity(subset.len(data));
    subset.for_each(data, |i| {
        let zv = data.row(i).dot(v);
        out.push(sigmoid_prime(margin(state, data, i)) * zv * zv + reg);
    });
    Ok(out)
}

/// Curvature bounds from the data; `gamma` is left at zero.
pub fn estimate_constants(data: &SparseDataset, lambda: f64) -> Result<ProblemConstants> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "constants need lambda > 0, got {lambda}"
        )));
    }
    let sq_norms: Vec<f64> = data.rows().iter().map(|r| r.norm_sq()).collect();
    let mean_sq = sq_norms.iter().sum::<f64>() / data.n_samples() as f64;
    let max_sq = sq_norms.iter().copied().fold(0.0, f64::max);
    let mut c = ProblemConstants::new(lambda, lambda + 0.25 * mean_sq, 0.0)?;
    c.m_upper_per_sample = lambda + 0.25 * max_sq;
    Ok(c)
}
