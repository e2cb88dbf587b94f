//! Empirical divergence objectives, posterior weights, the
//! majorizing functionals and the factorized model-side integrals they share.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IrtError, Result};
use crate::linalg::Matrix;
use crate::model::{ItemBank, ResponseMatrix, ResponsePattern};
use crate::quadrature::QuadratureGrid;
use crate::scalar::Real;

/// Estimation criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mmle,
    Dpd,
    Gamma,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mmle => "mmle",
            Method::Dpd => "dpd",
            Method::Gamma => "gamma",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = IrtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mmle" => Ok(Method::Mmle),
            "dpd" => Ok(Method::Dpd),
            "gamma" => Ok(Method::Gamma),
            other => Err(IrtError::Config {
                field: "method",
                reason: format!("unknown method `{other}` (expected mmle, dpd or gamma)"),
            }),
        }
    }
}

/// A method together with its robustness parameter (`β` or `γ`).
///
/// For [`Method::Mmle`] the parameter is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperparameterRepr", into = "HyperparameterRepr")]
pub struct Hyperparameter {
    method: Method,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct HyperparameterRepr {
    method: Method,
    #[serde(default)]
    alpha: f64,
}

impl TryFrom<HyperparameterRepr> for Hyperparameter {
    type Error = IrtError;

    fn try_from(r: HyperparameterRepr) -> Result<Self> {
        Self::new(r.method, r.alpha)
    }
}

impl From<Hyperparameter> for HyperparameterRepr {
    fn from(h: Hyperparameter) -> Self {
        Self {
            method: h.method,
            alpha: h.alpha,
        }
    }
}

impl Hyperparameter {
    /// Validates `0 < alpha <= 1` for the robust methods; ignores `alpha` for MMLE.
    pub fn new(method: Method, alpha: f64) -> Result<Self> {
        match method {
            Method::Mmle => Ok(Self::mmle()),
            Method::Dpd | Method::Gamma => {
                if alpha > 0.0 && alpha <= 1.0 {
                    Ok(Self { method, alpha })
                } else {
                    Err(IrtError::AlphaOutOfRange {
                        method: method.name(),
                        alpha,
                    })
                }
            }
        }
    }

    pub fn mmle() -> Self {
        Self {
            method: Method::Mmle,
            alpha: 0.0,
        }
    }

    pub fn dpd(beta: f64) -> Result<Self> {
        Self::new(Method::Dpd, beta)
    }

    pub fn gamma(gamma: f64) -> Result<Self> {
        Self::new(Method::Gamma, gamma)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `mmle`, `dpd:0.3`, `gamma:0.5`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Mmle => "mmle".to_owned(),
            m => format!("{}:{}", m.name(), self.alpha),
        }
    }
}

impl fmt::Display for Hyperparameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Hyperparameter {
    type Err = IrtError;

    /// Parses `mmle`, `dpd:<beta>` or `gamma:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, alpha) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let method: Method = name.parse()?;
        match (method, alpha) {
            (Method::Mmle, _) => Ok(Self::mmle()),
            (m, None) => Err(IrtError::Config {
                field: "alpha",
                reason: format!("{m} requires a value, e.g. `{m}:0.3`"),
            }),
            (m, Some(a)) => {
                let alpha: f64 = a.trim().parse().map_err(|_| IrtError::Config {
                    field: "alpha",
                    reason: format!("`{a}` is not a number"),
                })?;
                Self::new(m, alpha)
            }
        }
    }
}

/// Distinct response patterns with multiplicities, in lexicographic order so
/// that every reduction over respondents is independent of row order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    patterns: Vec<ResponsePattern>,
    counts: Vec<usize>,
    total: usize,
}

impl PatternSet {
    pub fn from_matrix(data: &ResponseMatrix) -> Self {
        Self::from_patterns(data.rows().iter().cloned())
    }

    /// # Panics
    /// If the iterator is empty.
    pub fn from_patterns(rows: impl IntoIterator<Item = ResponsePattern>) -> Self {
        let mut tally: BTreeMap<ResponsePattern, usize> = BTreeMap::new();
        for u in rows {
            *tally.entry(u).or_default() += 1;
        }
        assert!(!tally.is_empty(), "pattern set needs at least one row");
        let total = tally.values().sum();
        let (patterns, counts) = tally.into_iter().unzip();
        Self {
            patterns,
            counts,
            total,
        }
    }

    pub fn patterns(&self) -> &[ResponsePattern] {
        &self.patterns
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Number of respondents `I`.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn n_items(&self) -> usize {
        self.patterns[0].len()
    }

    /// `count / I` per distinct pattern.
    pub(crate) fn frequencies<T: Real>(&self) -> Vec<T> {
        let n = T::from_count(self.total);
        self.counts.iter().map(|&c| T::from_count(c) / n).collect()
    }
}

/// Per-node item quantities at one parameter value, `K × J` row-major.
#[derive(Debug, Clone)]
pub(crate) struct NodeTable<T> {
    pub k: usize,
    pub j: usize,
    pub scale: T,
    pub weights: Vec<T>,
    pub log_weights: Vec<T>,
    pub p: Vec<T>,
    pub q: Vec<T>,
    pub logp: Vec<T>,
    pub logq: Vec<T>,
}

impl<T: Real> NodeTable<T> {
    pub fn new(bank: &ItemBank<T>, grid: &QuadratureGrid<T>) -> Self {
        let (k, j) = (grid.len(), bank.len());
        let mut table = Self {
            k,
            j,
            scale: bank.scale(),
            weights: grid.weights().to_vec(),
            log_weights: grid.weights().iter().map(|w| w.ln()).collect(),
            p: Vec::with_capacity(k * j),
            q: Vec::with_capacity(k * j),
            logp: Vec::with_capacity(k * j),
            logq: Vec::with_capacity(k * j),
        };
        for &theta in grid.nodes() {
            for item in 0..j {
                let (p, q) = bank.icc_pair(theta, item);
                let (lp, lq) = bank.log_icc_pair(theta, item);
                table.p.push(p);
                table.q.push(q);
                table.logp.push(lp);
                table.logq.push(lq);
            }
        }
        table
    }

    /// `ln q(u | θ_k)` for every node.
    pub fn log_conditional(&self, u: &ResponsePattern) -> Vec<T> {
        let bits = u.bits();
        (0..self.k)
            .map(|k| {
                let base = k * self.j;
                bits.iter()
                    .enumerate()
                    .map(|(j, &b)| {
                        if b == 1 {
                            self.logp[base + j]
                        } else {
                            self.logq[base + j]
                        }
                    })
                    .sum()
            })
            .collect()
    }

    /// `ξ_j(θ_k)` for response bit `b`.
    #[inline]
    pub fn xi(&self, k: usize, j: usize, b: u8) -> T {
        let idx = k * self.j + j;
        if b == 1 {
            -self.scale * self.q[idx]
        } else {
            self.scale * self.p[idx]
        }
    }

    /// `Σ_jj(θ_k) = -D² P Q`.
    #[inline]
    pub fn sigma(&self, k: usize, j: usize) -> T {
        let idx = k * self.j + j;
        -self.scale * self.scale * self.p[idx] * self.q[idx]
    }

    /// Log-marginal and normalized posterior over nodes from `ln q(u | θ_k)`.
    pub fn posterior(&self, ll: &[T]) -> (T, Vec<T>) {
        let logs: Vec<T> = ll
            .iter()
            .zip(&self.log_weights)
            .map(|(&l, &w)| l + w)
            .collect();
        let max = logs.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = logs.iter().map(|&x| (x - max).exp()).collect();
        let s: T = e.iter().copied().sum();
        (max + s.ln(), e.into_iter().map(|x| x / s).collect())
    }

    /// Log-marginal of a pattern.
    pub fn log_marginal(&self, u: &ResponsePattern) -> T {
        self.posterior(&self.log_conditional(u)).0
    }
}

/// Model-side integrals over all `2^J` patterns, evaluated in `O(K J²)`
/// through local independence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIntegrals<T> {
    /// `C = Σ_u ∫ q(u|θ)^{1+α} f(θ) dθ`.
    pub c: T,
    /// `C - 1`, accurate when `α` is small.
    pub c_minus_one: T,
    /// `E = Σ_u ∫ q^{1+α} ξ f dθ`; `∇_b C = (1 + α) E`.
    pub e: Vec<T>,
    /// `M2 = Σ_u ∫ q^{1+α} ((1+α) ξξᵀ + Σ) f dθ = ∂E/∂bᵀ`.
    pub m2: Matrix<T>,
}

impl<T: Real> ModelIntegrals<T> {
    pub fn new(bank: &ItemBank<T>, grid: &QuadratureGrid<T>, alpha: T) -> Self {
        Self::from_table(&NodeTable::new(bank, grid), alpha)
    }

    pub(crate) fn from_table(t: &NodeTable<T>, alpha: T) -> Self {
        let j = t.j;
        let d = t.scale;
        let d2 = d * d;
        let ap = T::one() + alpha;
        let mut c = T::zero();
        let mut c_minus_one = T::zero();
        let mut e = vec![T::zero(); j];
        let mut m2 = Matrix::zeros(j, j);
        let mut s = vec![T::zero(); j];
        let mut tt = vec![T::zero(); j];
        let mut r = vec![T::zero(); j];
        for k in 0..t.k {
            let base = k * j;
            let mut log_prod = T::zero();
            for m in 0..j {
                let (p, q) = (t.p[base + m], t.q[base + m]);
                let (lp, lq) = (t.logp[base + m], t.logq[base + m]);
                let pa = (ap * lp).exp();
                let qa = (ap * lq).exp();
                log_prod += (p * (alpha * lp).exp_m1() + q * (alpha * lq).exp_m1()).ln_1p();
                let pq = d2 * p * q;
                // Each s_m >= 2^{-α} >= 1/2, so dividing by it below is safe.
                s[m] = pa + qa;
                tt[m] = d * (qa * p - pa * q);
                r[m] = pa * (ap * d2 * q * q - pq) + qa * (ap * d2 * p * p - pq);
            }
            let w = t.weights[k];
            let prod: T = s.iter().copied().fold(T::one(), |a, x| a * x);
            c += w * prod;
            c_minus_one += w * log_prod.exp_m1();
            for a in 0..j {
                let without_a = w * prod / s[a];
                e[a] += without_a * tt[a];
                m2[(a, a)] += without_a * r[a];
                for b in (a + 1)..j {
                    let v = ap * without_a / s[b] * tt[a] * tt[b];
                    m2[(a, b)] += v;
                    m2[(b, a)] += v;
                }
            }
        }
        Self {
            c,
            c_minus_one,
            e,
            m2,
        }
    }
}

/// `Σ_k w_k Π_j (P_j^{1+α} + Q_j^{1+α})`, the integral of `q^{1+α}` over
/// patterns and abilities.
pub fn model_power_integral<T: Real>(bank: &ItemBank<T>, grid: &QuadratureGrid<T>, alpha: T) -> T {
    let ap = T::one() + alpha;
    (0..grid.len())
        .map(|k| {
            let theta = grid.nodes()[k];
            let prod = (0..bank.len())
                .map(|j| {
                    let (lp, lq) = bank.log_icc_pair(theta, j);
                    (ap * lp).exp() + (ap * lq).exp()
                })
                .fold(T::one(), |a, x| a * x);
            grid.weights()[k] * prod
        })
        .sum()
}

/// Discrete posterior of each respondent's ability on the quadrature nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorWeights<T> {
    rows: Vec<Vec<T>>,
}

impl<T: Real> PosteriorWeights<T> {
    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Posterior means `E[θ | u_i]`.
    pub fn means(&self, grid: &QuadratureGrid<T>) -> Vec<T> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(grid.nodes()).map(|(&g, &t)| g * t).sum())
            .collect()
    }
}

/// `g(θ_k | u_i; b) = w_k q(u_i|θ_k) / Σ_m w_m q(u_i|θ_m)`.
pub fn posterior_weights<T: Real>(
    data: &ResponseMatrix,
    bank: &ItemBank<T>,
    grid: &QuadratureGrid<T>,
) -> Result<PosteriorWeights<T>> {
    check_items(data, bank)?;
    let table = NodeTable::new(bank, grid);
    let rows = data
        .rows()
        .iter()
        .map(|u| table.posterior(&table.log_conditional(u)).1)
        .collect();
    Ok(PosteriorWeights { rows })
}

/// Negative mean marginal log-likelihood `-(1/I) Σ_i ln q(u_i; b)`.
pub fn mmle_objective<T: Real>(
    data: &ResponseMatrix,
    bank: &ItemBank<T>,
    grid: &QuadratureGrid<T>,
) -> Result<T> {
    check_items(data, bank)?;
    let set = PatternSet::from_matrix(data);
    Ok(objective_on_set(
        Hyperparameter::mmle(),
        &set,
        &NodeTable::new(bank, grid),
    ))
}

/// `-(1/β) (1/I) Σ_i q(u_i; b)^β + C_β(b) / (1 + β)`.
pub fn dpd_objective<T: Real>(
    data: &ResponseMatrix,
    bank: &ItemBank<T>,
    grid: &QuadratureGrid<T>,
    beta: T,
) -> Result<T> {
    check_items(data, bank)?;
    let hyper = Hyperparameter::dpd(to_f64(beta))?;
    let set = PatternSet::from_matrix(data);
    Ok(objective_on_set(hyper, &set, &NodeTable::new(bank, grid)))
}

/// `-(1/γ) ln((1/I) Σ_i q(u_i; b)^γ) + ln C_γ(b) / (1 + γ)`.
pub fn gamma_objective<T: Real>(
    data: &ResponseMatrix,
    bank: &ItemBank<T>,
    grid: &QuadratureGrid<T>,
    gamma: T,
) -> Result<T> {
    check_items(data, bank)?;
    let hyper = Hyperparameter::gamma(to_f64(gamma))?;
    let set = PatternSet::from_matrix(data);
    Ok(objective_on_set(hyper, &set, &NodeTable::new(bank, grid)))
}

/// The empirical objective selected by `hyper`.
pub fn objective<T: Real>(
    hyper: Hyperparameter,
    data: &ResponseMatrix,
    bank: &ItemBank<T>,
    grid: &QuadratureGrid<T>,
) -> Result<T> {
    check_items(data, bank)?;
    let set = PatternSet::from_matrix(data);
    Ok(objective_on_set(hyper, &set, &NodeTable::new(bank, grid)))
}

pub(crate) fn objective_on_set<T: Real>(
    hyper: Hyperparameter,
    set: &PatternSet,
    table: &NodeTable<T>,
) -> T {
    let freq = set.frequencies::<T>();
    let log_marg: Vec<T> = set
        .patterns()
        .iter()
        .map(|u| table.log_marginal(u))
        .collect();
    let alpha = T::lit(hyper.alpha());
    match hyper.method() {
        Method::Mmle => -freq.iter().zip(&log_marg).map(|(&f, &l)| f * l).sum::<T>(),
        Method::Dpd => {
            let mean: T = freq
                .iter()
                .zip(&log_marg)
                .map(|(&f, &l)| f * (alpha * l).exp())
                .sum();
            let c = ModelIntegrals::from_table(table, alpha).c;
            -mean / alpha + c / (T::one() + alpha)
        }
        Method::Gamma => {
            let log_mean = weighted_log_mean_exp(&freq, log_marg.iter().map(|&l| alpha * l));
            let c = ModelIntegrals::from_table(table, alpha).c;
            -log_mean / alpha + c.ln() / (T::one() + alpha)
        }
    }
}

/// `ln Σ_i f_i e^{x_i}` without underflow.
fn weighted_log_mean_exp<T: Real>(freq: &[T], xs: impl Iterator<Item = T> + Clone) -> T {
    let max = xs.clone().fold(T::neg_infinity(), T::max);
    let s: T = freq.iter().zip(xs).map(|(&f, x)| f * (x - max).exp()).sum();
    max + s.ln()
}

/// Which divergence a [`Majorizer`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Dpd,
    Gamma,
}

/// Value, gradient and Hessian of a surrogate at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateDerivatives<T> {
    pub value: T,
    pub gradient: Vec<T>,
    pub hessian: Matrix<T>,
}

pub(crate) struct CenteredDerivatives<T> {
    pub derivatives: SurrogateDerivatives<T>,
    pub offset: T,
    pub factor: T,
}

/// The functional `L_β(h, ·)` or `L_γ(h, ·)` with posterior weights `h`
/// frozen at an anchor.
///
/// Its gradient at the anchor is the mean estimating function (scaled by
/// `C T0` for the γ-divergence), so its fixed points are exactly the roots of
/// the estimating equation.
#[derive(Debug, Clone)]
pub struct Majorizer<'a, T> {
    kind: Kind,
    alpha: T,
    rows: &'a [ResponsePattern],
    freq: Vec<T>,
    h: Vec<Vec<T>>,
    grid: &'a QuadratureGrid<T>,
    scale: T,
}

impl<'a, T: Real> Majorizer<'a, T> {
    /// One term per respondent of `data`, each with weight `1/I`.
    pub fn new(
        hyper: Hyperparameter,
        data: &'a ResponseMatrix,
        weights: &PosteriorWeights<T>,
        grid: &'a QuadratureGrid<T>,
        scale: T,
    ) -> Result<Self> {
        if weights.len() != data.n_respondents() {
            return Err(IrtError::LengthMismatch {
                left: data.n_respondents(),
                right: weights.len(),
            });
        }
        let n = T::from_count(data.n_respondents());
        Self::build(
            hyper,
            data.rows(),
            vec![T::one() / n; data.n_respondents()],
            weights.rows.clone(),
            grid,
            scale,
        )
    }

    /// One term per distinct pattern with its empirical frequency.
    pub(crate) fn on_set(
        hyper: Hyperparameter,
        set: &'a PatternSet,
        h: Vec<Vec<T>>,
        grid: &'a QuadratureGrid<T>,
        scale: T,
    ) -> Result<Self> {
        Self::build(hyper, set.patterns(), set.frequencies(), h, grid, scale)
    }

    fn build(
        hyper: Hyperparameter,
        rows: &'a [ResponsePattern],
        freq: Vec<T>,
        h: Vec<Vec<T>>,
        grid: &'a QuadratureGrid<T>,
        scale: T,
    ) -> Result<Self> {
        let kind = match hyper.method() {
            Method::Dpd => Kind::Dpd,
            Method::Gamma => Kind::Gamma,
            Method::Mmle => {
                return Err(IrtError::Config {
                    field: "method",
                    reason: "the divergence majorizer needs dpd or gamma".into(),
                })
            }
        };
        if let Some(bad) = h.iter().find(|r| r.len() != grid.len()) {
            return Err(IrtError::LengthMismatch {
                left: grid.len(),
                right: bad.len(),
            });
        }
        Ok(Self {
            kind,
            alpha: T::lit(hyper.alpha()),
            rows,
            freq,
            h,
            grid,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, ResponsePattern::len)
    }

    fn bank(&self, b: &[T]) -> Result<ItemBank<T>> {
        ItemBank::with_scale(b.to_vec(), self.scale)
    }

    /// `T0 - 1` where `T0 = Σ_i f_i Σ_k h_ik q(u_i|θ_k; b)^α`, summed as
    /// `expm1` terms so that small `α` loses no precision.
    fn t0_minus_one(&self, table: &NodeTable<T>) -> T {
        let mut mass = T::zero();
        let mut excess = T::zero();
        for ((u, &f), h) in self.rows.iter().zip(&self.freq).zip(&self.h) {
            let ll = table.log_conditional(u);
            let mut row_mass = T::zero();
            let mut row_excess = T::zero();
            for (&hk, &l) in h.iter().zip(&ll) {
                row_mass += hk;
                row_excess += hk * (self.alpha * l).exp_m1();
            }
            mass += f * row_mass;
            excess += f * row_excess;
        }
        (mass - T::one()) + excess
    }

    /// The functional minus its `b`-independent offset
    /// (`1/(1+β) - 1/β` for DPD, zero for γ).
    fn centered(&self, table: &NodeTable<T>) -> (T, T) {
        let t0m1 = self.t0_minus_one(table);
        let mi = ModelIntegrals::from_table(table, self.alpha);
        let one = T::one();
        let ap = one + self.alpha;
        match self.kind {
            Kind::Dpd => (
                -t0m1 / self.alpha + mi.c_minus_one / ap,
                one / ap - one / self.alpha,
            ),
            Kind::Gamma => (
                -t0m1.ln_1p() / self.alpha + mi.c_minus_one.ln_1p() / ap,
                T::zero(),
            ),
        }
    }

    pub fn value(&self, b: &[T]) -> Result<T> {
        let (centered, offset) = self.centered_value(b)?;
        Ok(centered + offset)
    }

    /// `(L - offset, offset)` with a `b`-independent offset; minimizing the
    /// first component avoids the `1/α` cancellation of the DPD form.
    pub(crate) fn centered_value(&self, b: &[T]) -> Result<(T, T)> {
        let table = NodeTable::new(&self.bank(b)?, self.grid);
        Ok(self.centered(&table))
    }

    pub fn derivatives(&self, b: &[T]) -> Result<SurrogateDerivatives<T>> {
        let c = self.centered_derivatives(b)?;
        let mut d = c.derivatives;
        d.value += c.offset;
        Ok(d)
    }

    /// Derivatives with the centered value, the offset and the factor `C T0`
    /// linking the γ gradient to the mean estimating function (one for DPD).
    pub(crate) fn centered_derivatives(&self, b: &[T]) -> Result<CenteredDerivatives<T>> {
        let bank = self.bank(b)?;
        let table = NodeTable::new(&bank, self.grid);
        let j = table.j;
        let alpha = self.alpha;
        let mut t0 = T::zero();
        let mut t1 = vec![T::zero(); j];
        let mut t2 = Matrix::zeros(j, j);
        let mut sigma_w = vec![T::zero(); table.k];
        let mut xi = vec![T::zero(); j];
        for ((u, &f), h) in self.rows.iter().zip(&self.freq).zip(&self.h) {
            let ll = table.log_conditional(u);
            let bits = u.bits();
            for k in 0..table.k {
                let w = f * h[k] * (alpha * ll[k]).exp();
                if w == T::zero() {
                    continue;
                }
                t0 += w;
                sigma_w[k] += w;
                for (m, x) in xi.iter_mut().enumerate() {
                    *x = table.xi(k, m, bits[m]);
                }
                for a in 0..j {
                    t1[a] += w * xi[a];
                    let wa = w * alpha * xi[a];
                    for c in a..j {
                        t2[(a, c)] += wa * xi[c];
                    }
                }
            }
        }
        for (k, &sw) in sigma_w.iter().enumerate() {
            for a in 0..j {
                t2[(a, a)] += sw * table.sigma(k, a);
            }
        }
        for a in 0..j {
            for c in 0..a {
                t2[(a, c)] = t2[(c, a)];
            }
        }
        let mi = ModelIntegrals::from_table(&table, alpha);
        let one = T::one();
        let (value, offset) = self.centered(&table);
        let (derivatives, factor) = match self.kind {
            Kind::Dpd => {
                let gradient = t1.iter().zip(&mi.e).map(|(&a, &e)| e - a).collect();
                let mut hessian = mi.m2.clone();
                hessian.add_scaled(&t2, -one);
                (
                    SurrogateDerivatives {
                        value,
                        gradient,
                        hessian,
                    },
                    one,
                )
            }
            Kind::Gamma => {
                let gradient = t1
                    .iter()
                    .zip(&mi.e)
                    .map(|(&a, &e)| e / mi.c - a / t0)
                    .collect();
                let mut hessian = mi.m2.scaled(one / mi.c);
                hessian.add_scaled(&t2, -one / t0);
                hessian.add_outer(&t1, &t1, alpha / (t0 * t0));
                hessian.add_outer(&mi.e, &mi.e, -(one + alpha) / (mi.c * mi.c));
                (
                    SurrogateDerivatives {
                        value,
                        gradient,
                        hessian,
                    },
                    mi.c * t0,
                )
            }
        };
        Ok(CenteredDerivatives {
            derivatives,
            offset,
            factor,
        })
    }
}

/// `L_β(h, b) = -(1/β)(1/I) Σ_i Σ_k h_ik q(u_i|θ_k; b)^β + C_β(b)/(1+β)`.
pub fn dpd_majorizer<T: Real>(
    data: &ResponseMatrix,
    bank_eval: &ItemBank<T>,
    weights: &PosteriorWeights<T>,
    grid: &QuadratureGrid<T>,
    beta: T,
) -> Result<T> {
    check_items(data, bank_eval)?;
    let hyper = Hyperparameter::dpd(to_f64(beta))?;
    Majorizer::new(hyper, data, weights, grid, bank_eval.scale())?.value(bank_eval.difficulties())
}

/// `L_γ(h, b) = -(1/γ) ln((1/I) Σ_i Σ_k h_ik q(u_i|θ_k; b)^γ) + ln C_γ(b)/(1+γ)`.
pub fn gamma_majorizer<T: Real>(
    data: &ResponseMatrix,
    bank_eval: &ItemBank<T>,
    weights: &PosteriorWeights<T>,
    grid: &QuadratureGrid<T>,
    gamma: T,
) -> Result<T> {
    check_items(data, bank_eval)?;
    let hyper = Hyperparameter::gamma(to_f64(gamma))?;
    Majorizer::new(hyper, data, weights, grid, bank_eval.scale())?.value(bank_eval.difficulties())
}

pub(crate) fn check_items<T: Real>(data: &ResponseMatrix, bank: &ItemBank<T>) -> Result<()> {
    if data.n_items() != bank.len() {
        return Err(IrtError::PatternLength {
            expected: bank.len(),
            found: data.n_items(),
        });
    }
    Ok(())
}

pub(crate) fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
