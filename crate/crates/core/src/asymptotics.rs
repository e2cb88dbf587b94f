//! Estimating functions `ψ_KL`, `ψ_β`, `ψ_γ`, their Jacobians and the
//! sandwich covariance `V⁻¹ K V⁻ᵀ / I`.
//!
//! With `g_k` the posterior over nodes for pattern `u`, `q_k = q(u|θ_k)` and
//! `ξ_k = ξ(θ_k, b; u)`:
//!
//! ```text
//! a = Σ_k g_k q_k^α ξ_k        B = Σ_k g_k q_k^α        G = Σ_k g_k ξ_k
//! H = Σ_k g_k q_k^α ((1+α) ξ_k ξ_kᵀ + Σ_k)
//!
//! ψ_KL = -G                     V_KL = -Σ_k g_k (ξ_k ξ_kᵀ + Σ_k) + G Gᵀ
//! ψ_β  = -a + E                 V_β  = -H + a Gᵀ + M2
//! ψ_γ  = -C a + B E             V_γ  = -C H + C a Gᵀ - B E Gᵀ + B M2
//!                                      + (1+α) (E aᵀ - a Eᵀ)
//! ```
//!
//! where `C`, `E`, `M2` are the model integrals of [`ModelIntegrals`].

use serde::{Deserialize, Serialize};

use crate::error::{IrtError, Result};
use crate::linalg::{inverse_with_condition, Matrix};
use crate::model::{ItemBank, ResponseMatrix, ResponsePattern};
use crate::objectives::{
    check_items, Hyperparameter, Method, ModelIntegrals, NodeTable, PatternSet,
};
use crate::quadrature::QuadratureGrid;
use crate::scalar::Real;

/// Largest 1-norm condition number of `V̂` accepted before inversion.
pub const MAX_CONDITION: f64 = 1e12;

/// `ψ` and `∂ψ/∂bᵀ` for one method at a fixed item bank.
#[derive(Debug, Clone)]
pub struct EstimatingFunction<T> {
    hyper: Hyperparameter,
    alpha: T,
    table: NodeTable<T>,
    integrals: ModelIntegrals<T>,
}

struct PatternTerms<T> {
    a: Vec<T>,
    b: T,
    g: Vec<T>,
    h: Option<Matrix<T>>,
}

impl<T: Real> EstimatingFunction<T> {
    pub fn new(hyper: Hyperparameter, bank: &ItemBank<T>, grid: &QuadratureGrid<T>) -> Self {
        let alpha = T::lit(hyper.alpha());
        let table = NodeTable::new(bank, grid);
        let integrals = ModelIntegrals::from_table(&table, alpha);
        Self {
            hyper,
            alpha,
            table,
            integrals,
        }
    }

    pub fn hyperparameter(&self) -> Hyperparameter {
        self.hyper
    }

    pub fn n_items(&self) -> usize {
        self.table.j
    }

    pub fn integrals(&self) -> &ModelIntegrals<T> {
        &self.integrals
    }

    fn terms(&self, u: &ResponsePattern, with_jacobian: bool) -> Result<PatternTerms<T>> {
        let t = &self.table;
        if u.len() != t.j {
            return Err(IrtError::PatternLength {
                expected: t.j,
                found: u.len(),
            });
        }
        let ll = t.log_conditional(u);
        let (log_marg, post) = t.posterior(&ll);
        if !log_marg.is_finite() {
            return Err(IrtError::ZeroMarginal {
                pattern: u.to_string(),
            });
        }
        let j = t.j;
        let one = T::one();
        let ap = one + self.alpha;
        let bits = u.bits();
        let mut a = vec![T::zero(); j];
        let mut g = vec![T::zero(); j];
        let mut b = T::zero();
        let mut h = with_jacobian.then(|| Matrix::zeros(j, j));
        let mut xi = vec![T::zero(); j];
        for k in 0..t.k {
            let gk = post[k];
            let wk = gk * (self.alpha * ll[k]).exp();
            b += wk;
            for (m, x) in xi.iter_mut().enumerate() {
                *x = t.xi(k, m, bits[m]);
            }
            for m in 0..j {
                a[m] += wk * xi[m];
                g[m] += gk * xi[m];
            }
            if let Some(h) = h.as_mut() {
                h.add_outer(&xi, &xi, wk * ap);
                for m in 0..j {
                    h[(m, m)] += wk * t.sigma(k, m);
                }
            }
        }
        Ok(PatternTerms { a, b, g, h })
    }

    fn psi_from(&self, t: &PatternTerms<T>) -> Vec<T> {
        let mi = &self.integrals;
        match self.hyper.method() {
            Method::Mmle => t.g.iter().map(|&x| -x).collect(),
            Method::Dpd => t.a.iter().zip(&mi.e).map(|(&a, &e)| e - a).collect(),
            Method::Gamma => {
                t.a.iter()
                    .zip(&mi.e)
                    .map(|(&a, &e)| t.b * e - mi.c * a)
                    .collect()
            }
        }
    }

    fn jacobian_from(&self, t: &PatternTerms<T>) -> Matrix<T> {
        let mi = &self.integrals;
        let one = T::one();
        let h = t.h.as_ref().expect("jacobian terms requested");
        match self.hyper.method() {
            Method::Mmle => {
                let mut v = h.scaled(-one);
                v.add_outer(&t.g, &t.g, one);
                v
            }
            Method::Dpd => {
                let mut v = mi.m2.clone();
                v.add_scaled(h, -one);
                v.add_outer(&t.a, &t.g, one);
                v
            }
            Method::Gamma => {
                let ap = one + self.alpha;
                let mut v = mi.m2.scaled(t.b);
                v.add_scaled(h, -mi.c);
                v.add_outer(&t.a, &t.g, mi.c);
                v.add_outer(&mi.e, &t.g, -t.b);
                v.add_outer(&mi.e, &t.a, ap);
                v.add_outer(&t.a, &mi.e, -ap);
                v
            }
        }
    }

    /// `ψ(b; u)`.
    pub fn psi(&self, u: &ResponsePattern) -> Result<Vec<T>> {
        Ok(self.psi_from(&self.terms(u, false)?))
    }

    /// `∂ψ(b; u)/∂bᵀ`.
    pub fn jacobian(&self, u: &ResponsePattern) -> Result<Matrix<T>> {
        Ok(self.jacobian_from(&self.terms(u, true)?))
    }

    pub fn psi_and_jacobian(&self, u: &ResponsePattern) -> Result<(Vec<T>, Matrix<T>)> {
        let t = self.terms(u, true)?;
        Ok((self.psi_from(&t), self.jacobian_from(&t)))
    }

    /// `Ψ^(I)(b) = (1/I) Σ_i ψ(b; u_i)`.
    pub fn mean_psi(&self, data: &ResponseMatrix) -> Result<Vec<T>> {
        self.mean_psi_on_set(&PatternSet::from_matrix(data))
    }

    pub(crate) fn mean_psi_on_set(&self, set: &PatternSet) -> Result<Vec<T>> {
        let mut acc = vec![T::zero(); self.n_items()];
        for (u, f) in set.patterns().iter().zip(set.frequencies::<T>()) {
            for (a, p) in acc.iter_mut().zip(self.psi(u)?) {
                *a += f * p;
            }
        }
        Ok(acc)
    }

    /// `V̂ = (1/I) Σ_i ∂ψ(b; u_i)/∂bᵀ`.
    pub fn mean_jacobian(&self, data: &ResponseMatrix) -> Result<Matrix<T>> {
        Ok(self.moments_on_set(&PatternSet::from_matrix(data))?.0)
    }

    /// `(V̂, K̂)` over a pattern set.
    pub(crate) fn moments_on_set(&self, set: &PatternSet) -> Result<(Matrix<T>, Matrix<T>)> {
        let j = self.n_items();
        let mut v = Matrix::zeros(j, j);
        let mut k = Matrix::zeros(j, j);
        for (u, f) in set.patterns().iter().zip(set.frequencies::<T>()) {
            let (psi, jac) = self.psi_and_jacobian(u)?;
            v.add_scaled(&jac, f);
            k.add_outer(&psi, &psi, f);
        }
        Ok((v, k))
    }
}

/// `ψ(b; u)` for the method in `hyper`.
pub fn psi<T: Real>(
    hyper: Hyperparameter,
    bank: &ItemBank<T>,
    u: &ResponsePattern,
    grid: &QuadratureGrid<T>,
) -> Result<Vec<T>> {
    EstimatingFunction::new(hyper, bank, grid).psi(u)
}

/// `∂ψ(b; u)/∂bᵀ` for the method in `hyper`.
pub fn psi_jacobian<T: Real>(
    hyper: Hyperparameter,
    bank: &ItemBank<T>,
    u: &ResponsePattern,
    grid: &QuadratureGrid<T>,
) -> Result<Matrix<T>> {
    EstimatingFunction::new(hyper, bank, grid).jacobian(u)
}

/// Plug-in sandwich estimate at `b̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichCovariance<T> {
    /// Mean Jacobian `V̂`.
    pub v: Matrix<T>,
    /// Mean outer product `K̂ = (1/I) Σ ψ ψᵀ`.
    pub k: Matrix<T>,
    /// `V̂⁻¹ K̂ V̂⁻ᵀ / I`, symmetrized.
    pub cov: Matrix<T>,
    /// Sample size `I`.
    pub n: usize,
    /// 1-norm condition number of `V̂`.
    pub condition: T,
}

impl<T: Real> SandwichCovariance<T> {
    pub fn standard_errors(&self) -> Vec<T> {
        self.cov
            .diag()
            .into_iter()
            .map(|d| d.max(T::zero()).sqrt())
            .collect()
    }
}

/// Inverts `V̂`, refusing matrices with condition number above [`MAX_CONDITION`].
pub(crate) fn guarded_inverse<T: Real>(v: &Matrix<T>) -> Result<(Matrix<T>, T)> {
    let (inv, cond) = inverse_with_condition(v)?;
    if !(cond.is_finite() && cond <= T::lit(MAX_CONDITION)) || !inv.is_finite() {
        return Err(IrtError::Singular {
            condition: cond.to_f64().unwrap_or(f64::INFINITY),
        });
    }
    Ok((inv, cond))
}

pub fn sandwich_covariance<T: Real>(
    hyper: Hyperparameter,
    b_hat: &ItemBank<T>,
    data: &ResponseMatrix,
    grid: &QuadratureGrid<T>,
) -> Result<SandwichCovariance<T>> {
    check_items(data, b_hat)?;
    sandwich_on_set(hyper, b_hat, &PatternSet::from_matrix(data), grid)
}

pub(crate) fn sandwich_on_set<T: Real>(
    hyper: Hyperparameter,
    b_hat: &ItemBank<T>,
    set: &PatternSet,
    grid: &QuadratureGrid<T>,
) -> Result<SandwichCovariance<T>> {
    let ef = EstimatingFunction::new(hyper, b_hat, grid);
    let (v, k) = ef.moments_on_set(set)?;
    let (vinv, condition) = guarded_inverse(&v)?;
    let n = set.total();
    let mut cov = vinv.matmul(&k).matmul(&vinv.transpose());
    cov.scale(T::one() / T::from_count(n));
    cov.symmetrize();
    Ok(SandwichCovariance {
        v,
        k,
        cov,
        n,
        condition,
    })
}
