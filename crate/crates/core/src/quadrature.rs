//! Gauss–Hermite rules for expectations under the standard-normal ability prior.

use serde::{Deserialize, Serialize};

use crate::error::{IrtError, Result};
use crate::scalar::Real;

pub const MIN_NODES: usize = 2;
pub const MAX_NODES: usize = 200;
pub const DEFAULT_NODES: usize = 21;

/// Nodes and probability weights discretizing N(0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> QuadratureGrid<T> {
    /// Gauss–Hermite rule with `k` nodes mapped onto the standard normal:
    /// `θ_k = √2 x_k`, `w_k = v_k / √π`, weights renormalized to sum to one.
    pub fn gauss_hermite(k: usize) -> Result<Self> {
        if k < MIN_NODES {
            return Err(IrtError::NodeCount {
                count: k,
                bound: "at least 2 nodes required",
            });
        }
        if k > MAX_NODES {
            return Err(IrtError::NodeCount {
                count: k,
                bound: "at most 200 nodes supported",
            });
        }
        let (x, v) = golub_welsch::<T>(k)?;
        let sqrt2 = T::lit(2.0).sqrt();
        let mut nodes: Vec<T> = x.iter().map(|&xi| xi * sqrt2).collect();
        let mut weights = v;

        // Exact mirror symmetry about zero.
        let half = T::lit(0.5);
        for i in 0..k / 2 {
            let j = k - 1 - i;
            let node = (nodes[j] - nodes[i]) * half;
            let weight = (weights[i] + weights[j]) * half;
            nodes[i] = -node;
            nodes[j] = node;
            weights[i] = weight;
            weights[j] = weight;
        }
        if k % 2 == 1 {
            nodes[k / 2] = T::zero();
        }
        let total: T = weights.iter().copied().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { nodes, weights })
    }

    /// The rule used throughout the reproduction studies (21 nodes).
    pub fn standard() -> Self {
        Self::gauss_hermite(DEFAULT_NODES).expect("21-node rule is valid")
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ_k w_k g(θ_k)` for a scalar integrand.
    pub fn expect(&self, g: impl Fn(T) -> T) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * g(t))
            .sum()
    }

    /// `Σ_k w_k g(θ_k)` for a vector-valued integrand.
    pub fn expect_vec(&self, g: impl Fn(T) -> Vec<T>) -> Vec<T> {
        self.try_expect_vec(|t| Ok::<_, std::convert::Infallible>(g(t)))
            .unwrap_or_else(|e| match e {})
    }

    /// Vector expectation whose integrand may fail; the first failure is returned.
    ///
    /// Panics if the integrand returns vectors of differing lengths.
    pub fn try_expect_vec<E>(&self, g: impl Fn(T) -> Result<Vec<T>, E>) -> Result<Vec<T>, E> {
        let mut acc: Option<Vec<T>> = None;
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            let v = g(t)?;
            match acc.as_mut() {
                None => acc = Some(v.into_iter().map(|x| x * w).collect()),
                Some(a) => {
                    assert_eq!(a.len(), v.len(), "integrand changed dimension");
                    a.iter_mut().zip(v).for_each(|(a, x)| *a += w * x);
                }
            }
        }
        Ok(acc.unwrap_or_default())
    }
}

/// Physicists' Hermite nodes and normalized weights (`Σ v = 1`) from the
/// eigen-decomposition of the symmetric Jacobi matrix.
fn golub_welsch<T: Real>(k: usize) -> Result<(Vec<T>, Vec<T>)> {
    let mut diag = vec![T::zero(); k];
    let mut off: Vec<T> = (1..k)
        .map(|i| (T::from_count(i) * T::lit(0.5)).sqrt())
        .collect();
    off.push(T::zero());
    let mut first = vec![T::zero(); k];
    first[0] = T::one();
    tridiagonal_ql(&mut diag, &mut off, &mut first)?;

    let mut pairs: Vec<(T, T)> = diag
        .into_iter()
        .zip(first.into_iter().map(|z| z * z))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    Ok(pairs.into_iter().unzip())
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix.
///
/// `d` holds the diagonal and becomes the eigenvalues; `e[i]` couples rows
/// `i` and `i + 1` (`e[n-1]` is scratch). Only the first component of each
/// eigenvector is tracked, which is all Golub–Welsch needs.
fn tridiagonal_ql<T: Real>(d: &mut [T], e: &mut [T], z: &mut [T]) -> Result<()> {
    let n = d.len();
    let two = T::lit(2.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= T::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(IrtError::EigenSolver);
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] -= p;
                    e[m] = T::zero();
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    Ok(())
}
