//! Fitting drivers: MMLE by EM, and the DPD / γ-divergence MM algorithms
//! with one guarded Newton step on the frozen-weight functional per iteration.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{sandwich_on_set, SandwichCovariance};
use crate::error::{IrtError, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, norm2, Matrix};
use crate::model::{ItemBank, ResponseMatrix, DEFAULT_SCALE};
use crate::objectives::{
    objective_on_set, Hyperparameter, Majorizer, Method, NodeTable, PatternSet,
    SurrogateDerivatives,
};
use crate::quadrature::{QuadratureGrid, DEFAULT_NODES};
use crate::scalar::Real;

/// A smooth function minimized by [`inner_minimize`].
pub trait Surrogate<T: Real> {
    fn value(&self, b: &[T]) -> Result<T>;
    fn derivatives(&self, b: &[T]) -> Result<SurrogateDerivatives<T>>;
}

impl<T: Real> Surrogate<T> for Majorizer<'_, T> {
    fn value(&self, b: &[T]) -> Result<T> {
        Majorizer::value(self, b)
    }

    fn derivatives(&self, b: &[T]) -> Result<SurrogateDerivatives<T>> {
        Majorizer::derivatives(self, b)
    }
}

/// The majorizer with its constant offset removed, for precise comparisons.
struct Centered<'m, 'a, T>(&'m Majorizer<'a, T>);

impl<T: Real> Surrogate<T> for Centered<'_, '_, T> {
    fn value(&self, b: &[T]) -> Result<T> {
        Ok(self.0.centered_value(b)?.0)
    }

    fn derivatives(&self, b: &[T]) -> Result<SurrogateDerivatives<T>> {
        Ok(self.0.centered_derivatives(b)?.derivatives)
    }
}

/// Safeguards for the single Newton step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct InnerSolveConfig<T> {
    /// First Levenberg shift tried when the Hessian is not positive definite.
    pub initial_shift: T,
    pub shift_factor: T,
    /// Beyond this shift the step falls back to steepest descent.
    pub max_shift: T,
    pub max_halvings: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: T,
    /// Largest allowed coordinate change per step.
    pub max_step: T,
}

impl<T: Real> Default for InnerSolveConfig<T> {
    fn default() -> Self {
        Self {
            initial_shift: T::lit(1e-4),
            shift_factor: T::lit(10.0),
            max_shift: T::lit(1e12),
            max_halvings: 50,
            armijo: T::lit(1e-4),
            max_step: T::lit(5.0),
        }
    }
}

/// Outcome of one guarded Newton step.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerStep<T> {
    pub b: Vec<T>,
    pub start_value: T,
    pub value: T,
    /// `-(H + λI)⁻¹ g` before step capping and backtracking.
    pub direction: Vec<T>,
    pub shift: T,
    pub halvings: usize,
    /// No decrease was possible beyond rounding; `b` equals the start.
    pub stationary: bool,
}

/// One guarded Newton step from `b_start`; the returned point never has a
/// larger surrogate value than the start beyond rounding noise.
pub fn inner_minimize<T: Real, S: Surrogate<T>>(
    surrogate: &S,
    b_start: &[T],
    config: &InnerSolveConfig<T>,
) -> Result<InnerStep<T>> {
    let start = surrogate.derivatives(b_start)?;
    newton_step(surrogate, b_start, start, config, None)
}

fn newton_step<T: Real, S: Surrogate<T>>(
    surrogate: &S,
    b: &[T],
    start: SurrogateDerivatives<T>,
    cfg: &InnerSolveConfig<T>,
    bound: Option<T>,
) -> Result<InnerStep<T>> {
    let SurrogateDerivatives {
        value: f0,
        gradient: g,
        hessian: h,
    } = start;
    let n = g.len();
    let stationary = |direction: Vec<T>, shift: T, halvings: usize| InnerStep {
        b: b.to_vec(),
        start_value: f0,
        value: f0,
        direction,
        shift,
        halvings,
        stationary: true,
    };
    if g.iter().all(|&x| x == T::zero()) {
        return Ok(stationary(vec![T::zero(); n], T::zero(), 0));
    }

    let (direction, shift) = regularized_direction(&g, &h, cfg);
    let cap = direction.iter().fold(T::zero(), |m, d| m.max(d.abs()));
    let scale = if cap > cfg.max_step {
        cfg.max_step / cap
    } else {
        T::one()
    };
    let dir: Vec<T> = direction.iter().map(|&d| d * scale).collect();
    let noise = T::lit(8.0) * T::epsilon() * (f0.abs() + T::one());

    let mut s = T::one();
    for halvings in 0..=cfg.max_halvings {
        let trial: Vec<T> = b
            .iter()
            .zip(&dir)
            .map(|(&x, &d)| project(x + s * d, bound))
            .collect();
        let moved: Vec<T> = trial.iter().zip(b).map(|(&t, &x)| t - x).collect();
        let predicted = dot(&g, &moved);
        let ft = surrogate.value(&trial)?;
        if ft.is_finite() && ft <= f0 + cfg.armijo * predicted + noise {
            return Ok(InnerStep {
                b: trial,
                start_value: f0,
                value: ft,
                direction,
                shift,
                halvings,
                stationary: false,
            });
        }
        s *= T::lit(0.5);
    }
    let predicted = -dot(&g, &dir);
    if predicted <= T::lit(100.0) * T::epsilon() * (f0.abs() + T::one()) {
        return Ok(stationary(direction, shift, cfg.max_halvings));
    }
    Err(IrtError::LineSearch { iteration: 0 })
}

/// `-(H + λI)⁻¹ g` with the smallest tried `λ` making the system positive
/// definite; steepest descent if none does.
fn regularized_direction<T: Real>(
    g: &[T],
    h: &Matrix<T>,
    cfg: &InnerSolveConfig<T>,
) -> (Vec<T>, T) {
    let n = g.len();
    let mut shift = T::zero();
    loop {
        let mut shifted = h.clone();
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        if let Some(l) = cholesky(&shifted) {
            let d: Vec<T> = cholesky_solve(&l, g).into_iter().map(|x| -x).collect();
            if d.iter().all(|x| x.is_finite()) && dot(g, &d) < T::zero() {
                return (d, shift);
            }
        }
        shift = if shift == T::zero() {
            cfg.initial_shift
        } else {
            shift * cfg.shift_factor
        };
        if shift > cfg.max_shift {
            return (g.iter().map(|&x| -x).collect(), shift);
        }
    }
}

#[inline]
fn project<T: Real>(x: T, bound: Option<T>) -> T {
    match bound {
        Some(c) => x.max(-c).min(c),
        None => x,
    }
}

/// Settings shared by all three estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct FitConfig<T> {
    pub hyper: Hyperparameter,
    /// Gauss–Hermite node count.
    pub nodes: usize,
    /// Starting difficulties; empty means all zeros.
    pub init: Vec<T>,
    /// Convergence threshold on `max_j |b_j^(t+1) - b_j^(t)|`.
    pub tol: T,
    pub max_iter: usize,
    /// Additional bound on `‖Ψ^(I)‖₂` required for convergence; `None`
    /// uses the parameter-change criterion alone.
    pub stationarity_tol: Option<T>,
    pub inner: InnerSolveConfig<T>,
    /// Difficulties are confined to `[-clamp, clamp]`.
    pub clamp: T,
    pub scale: T,
    /// Attach the sandwich covariance to the result.
    pub compute_covariance: bool,
}

impl<T: Real> FitConfig<T> {
    pub fn new(hyper: Hyperparameter) -> Self {
        Self {
            hyper,
            nodes: DEFAULT_NODES,
            init: Vec::new(),
            tol: T::lit(1e-4),
            max_iter: 1000,
            stationarity_tol: Some(T::lit(1e-6)),
            inner: InnerSolveConfig::default(),
            clamp: T::lit(6.0),
            scale: T::lit(DEFAULT_SCALE),
            compute_covariance: false,
        }
    }

    pub fn with_covariance(mut self) -> Self {
        self.compute_covariance = true;
        self
    }

    pub fn validate(&self, items: usize) -> Result<()> {
        let positive = |x: T| x.is_finite() && x > T::zero();
        if !positive(self.tol) {
            return Err(config_error("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(config_error("max_iter", "must be at least 1"));
        }
        if !positive(self.clamp) {
            return Err(config_error("clamp", "must be positive"));
        }
        if let Some(s) = self.stationarity_tol {
            if !positive(s) {
                return Err(config_error("stationarity_tol", "must be positive"));
            }
        }
        if !(self.init.is_empty() || self.init.len() == items) {
            return Err(config_error(
                "init",
                &format!(
                    "has {} entries but the data have {items} items",
                    self.init.len()
                ),
            ));
        }
        if self.init.iter().any(|x| !x.is_finite()) {
            return Err(config_error("init", "must be finite"));
        }
        Hyperparameter::new(self.hyper.method(), self.hyper.alpha())?;
        Ok(())
    }
}

fn config_error(field: &'static str, reason: &str) -> IrtError {
    IrtError::Config {
        field,
        reason: reason.to_owned(),
    }
}

/// Estimated difficulties with the convergence record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub hyper: Hyperparameter,
    pub difficulties: Vec<T>,
    /// Parameter updates performed.
    pub iterations: usize,
    /// Empirical objective at `b^(0), b^(1), …`.
    pub objective_trace: Vec<T>,
    /// Frozen-weight functional at the anchor and after the step, per update.
    pub surrogate_trace: Vec<[T; 2]>,
    pub converged: bool,
    /// Last `max_j |Δb_j|`.
    pub last_step: T,
    /// `‖Ψ^(I)(b̂)‖₂`.
    pub stationarity_norm: T,
    pub covariance: Option<SandwichCovariance<T>>,
    /// Items whose estimate sits on the clamp boundary.
    pub clamped_items: Vec<usize>,
    pub warnings: Vec<String>,
}

impl<T: Real> FitResult<T> {
    pub fn standard_errors(&self) -> Option<Vec<T>> {
        self.covariance
            .as_ref()
            .map(SandwichCovariance::standard_errors)
    }

    pub fn bank(&self, scale: T) -> Result<ItemBank<T>> {
        ItemBank::with_scale(self.difficulties.clone(), scale)
    }
}

/// Fits the method selected in `config.hyper`.
pub fn fit<T: Real>(data: &ResponseMatrix, config: &FitConfig<T>) -> Result<FitResult<T>> {
    fit_set(&PatternSet::from_matrix(data), config)
}

pub fn fit_mmle<T: Real>(data: &ResponseMatrix, config: &FitConfig<T>) -> Result<FitResult<T>> {
    expect_method(config, Method::Mmle)?;
    fit(data, config)
}

pub fn fit_dpd<T: Real>(data: &ResponseMatrix, config: &FitConfig<T>) -> Result<FitResult<T>> {
    expect_method(config, Method::Dpd)?;
    fit(data, config)
}

pub fn fit_gamma<T: Real>(data: &ResponseMatrix, config: &FitConfig<T>) -> Result<FitResult<T>> {
    expect_method(config, Method::Gamma)?;
    fit(data, config)
}

fn expect_method<T>(config: &FitConfig<T>, method: Method) -> Result<()> {
    if config.hyper.method() != method {
        return Err(IrtError::MethodMismatch {
            requested: method.name(),
            configured: config.hyper.method().name(),
        });
    }
    Ok(())
}

pub(crate) fn fit_set<T: Real>(set: &PatternSet, config: &FitConfig<T>) -> Result<FitResult<T>> {
    let items = set.n_items();
    config.validate(items)?;
    let grid = QuadratureGrid::gauss_hermite(config.nodes)?;
    let init: Vec<T> = if config.init.is_empty() {
        vec![T::zero(); items]
    } else {
        config
            .init
            .iter()
            .map(|&x| project(x, Some(config.clamp)))
            .collect()
    };
    let mut result = match config.hyper.method() {
        Method::Mmle => run(set, &grid, config, init, Em)?,
        Method::Dpd | Method::Gamma => run(set, &grid, config, init, Mm)?,
    };

    let bound = config.clamp;
    result.clamped_items = result
        .difficulties
        .iter()
        .enumerate()
        .filter(|(_, b)| b.abs() >= bound)
        .map(|(j, _)| j)
        .collect();
    if !result.clamped_items.is_empty() {
        result.warnings.push(format!(
            "items {:?} reached the difficulty bound ±{bound}",
            result.clamped_items
        ));
    }
    if config.compute_covariance {
        let bank = result.bank(config.scale)?;
        result.covariance = Some(sandwich_on_set(config.hyper, &bank, set, &grid)?);
    }
    Ok(result)
}

/// State of one outer iteration at the current anchor.
struct Anchor<T> {
    objective: T,
    psi_norm: T,
}

/// One family of outer updates (EM or divergence MM).
trait Updater<T: Real> {
    /// Evaluates the anchor and proposes the next iterate.
    fn step(
        &self,
        set: &PatternSet,
        grid: &QuadratureGrid<T>,
        config: &FitConfig<T>,
        b: &[T],
        table: &NodeTable<T>,
        posterior: Vec<Vec<T>>,
    ) -> Result<(Anchor<T>, StepOutcome<T>)>;
}

enum StepOutcome<T> {
    Moved { b: Vec<T>, surrogate: [T; 2] },
    Stationary,
}

struct Em;
struct Mm;

impl<T: Real> Updater<T> for Em {
    fn step(
        &self,
        set: &PatternSet,
        grid: &QuadratureGrid<T>,
        config: &FitConfig<T>,
        b: &[T],
        table: &NodeTable<T>,
        posterior: Vec<Vec<T>>,
    ) -> Result<(Anchor<T>, StepOutcome<T>)> {
        let counts = ExpectedCounts::new(set, &posterior);
        let psi: Vec<T> = (0..b.len()).map(|j| counts.item_score(table, j)).collect();
        let anchor = Anchor {
            objective: objective_on_set(config.hyper, set, table),
            psi_norm: norm2(&psi),
        };
        let mut next = b.to_vec();
        for (j, x) in next.iter_mut().enumerate() {
            *x = counts.solve_item(grid, config, j, *x);
        }
        let start = counts.q_function(grid, config.scale, b);
        let end = counts.q_function(grid, config.scale, &next);
        Ok((
            anchor,
            StepOutcome::Moved {
                b: next,
                surrogate: [start, end],
            },
        ))
    }
}

impl<T: Real> Updater<T> for Mm {
    fn step(
        &self,
        set: &PatternSet,
        grid: &QuadratureGrid<T>,
        config: &FitConfig<T>,
        b: &[T],
        table: &NodeTable<T>,
        posterior: Vec<Vec<T>>,
    ) -> Result<(Anchor<T>, StepOutcome<T>)> {
        let maj = Majorizer::on_set(config.hyper, set, posterior, grid, config.scale)?;
        let centered = maj.centered_derivatives(b)?;
        let (derivs, offset) = (centered.derivatives, centered.offset);
        let anchor = Anchor {
            objective: objective_on_set(config.hyper, set, table),
            psi_norm: norm2(&derivs.gradient) * centered.factor,
        };
        let step = newton_step(
            &Centered(&maj),
            b,
            derivs,
            &config.inner,
            Some(config.clamp),
        )?;
        let outcome = if step.stationary {
            StepOutcome::Stationary
        } else {
            StepOutcome::Moved {
                surrogate: [step.start_value + offset, step.value + offset],
                b: step.b,
            }
        };
        Ok((anchor, outcome))
    }
}

fn run<T: Real, U: Updater<T>>(
    set: &PatternSet,
    grid: &QuadratureGrid<T>,
    config: &FitConfig<T>,
    mut b: Vec<T>,
    updater: U,
) -> Result<FitResult<T>> {
    let mut objective_trace = Vec::new();
    let mut surrogate_trace = Vec::new();
    let mut warnings = Vec::new();
    let mut last_step = T::infinity();
    let mut iterations = 0;
    let mut converged = false;
    let mut stationarity_norm;
    loop {
        let bank = ItemBank::with_scale(b.clone(), config.scale)?;
        let table = NodeTable::new(&bank, grid);
        let posterior: Vec<Vec<T>> = set
            .patterns()
            .iter()
            .map(|u| table.posterior(&table.log_conditional(u)).1)
            .collect();
        let (anchor, outcome) = updater
            .step(set, grid, config, &b, &table, posterior)
            .map_err(|e| match e {
                IrtError::LineSearch { .. } => IrtError::LineSearch {
                    iteration: iterations + 1,
                },
                other => other,
            })?;
        objective_trace.push(anchor.objective);
        stationarity_norm = anchor.psi_norm;
        let stationary_enough = config
            .stationarity_tol
            .map_or(true, |s| anchor.psi_norm < s);
        if last_step < config.tol && stationary_enough {
            converged = true;
            break;
        }
        if iterations == config.max_iter {
            break;
        }
        match outcome {
            StepOutcome::Stationary => {
                converged = true;
                if !stationary_enough {
                    warnings.push(format!(
                        "no further decrease possible with ‖Ψ‖₂ = {:e} above the stationarity tolerance",
                        to_f64(anchor.psi_norm)
                    ));
                }
                break;
            }
            StepOutcome::Moved { b: next, surrogate } => {
                last_step = next
                    .iter()
                    .zip(&b)
                    .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()));
                surrogate_trace.push(surrogate);
                b = next;
                iterations += 1;
            }
        }
    }
    if !converged {
        warnings.push(format!(
            "did not converge in {} iterations (last step {:e}, ‖Ψ‖₂ = {:e})",
            config.max_iter,
            to_f64(last_step),
            to_f64(stationarity_norm)
        ));
    }
    Ok(FitResult {
        hyper: config.hyper,
        difficulties: b,
        iterations,
        objective_trace,
        surrogate_trace,
        converged,
        last_step,
        stationarity_norm,
        covariance: None,
        clamped_items: Vec::new(),
        warnings,
    })
}

fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Posterior-expected counts for the EM M-step: `n_k = Σ_i g_ik / I` and
/// `r_jk = Σ_i g_ik u_ij / I`.
struct ExpectedCounts<T> {
    n: Vec<T>,
    r: Vec<Vec<T>>,
}

impl<T: Real> ExpectedCounts<T> {
    fn new(set: &PatternSet, posterior: &[Vec<T>]) -> Self {
        let k = posterior.first().map_or(0, Vec::len);
        let j = set.n_items();
        let mut n = vec![T::zero(); k];
        let mut r = vec![vec![T::zero(); k]; j];
        for ((u, f), g) in set
            .patterns()
            .iter()
            .zip(set.frequencies::<T>())
            .zip(posterior)
        {
            for (node, &gk) in g.iter().enumerate() {
                let w = f * gk;
                n[node] += w;
                for (item, &bit) in u.bits().iter().enumerate() {
                    if bit == 1 {
                        r[item][node] += w;
                    }
                }
            }
        }
        Self { n, r }
    }

    /// Gradient of the item's negative expected log-likelihood at the
    /// anchor, `D Σ_k (r_jk - n_k P_jk)`; equals component `j` of `Ψ_KL`.
    fn item_score(&self, table: &NodeTable<T>, j: usize) -> T {
        let sum: T = (0..table.k)
            .map(|k| self.r[j][k] - self.n[k] * table.p[k * table.j + j])
            .sum();
        table.scale * sum
    }

    /// Frozen-weight score and curvature for item `j` at difficulty `b`.
    fn item_derivatives(&self, grid: &QuadratureGrid<T>, scale: T, j: usize, b: T) -> (T, T) {
        let bank = ItemBank::with_scale(vec![b], scale).expect("finite difficulty");
        let mut g = T::zero();
        let mut h = T::zero();
        for (k, &theta) in grid.nodes().iter().enumerate() {
            let (p, q) = bank.icc_pair(theta, 0);
            g += self.r[j][k] - self.n[k] * p;
            h += self.n[k] * p * q;
        }
        (scale * g, scale * scale * h)
    }

    /// Newton on the strictly convex item objective, clamped.
    fn solve_item(&self, grid: &QuadratureGrid<T>, config: &FitConfig<T>, j: usize, start: T) -> T {
        let mut b = start;
        for _ in 0..100 {
            let (g, h) = self.item_derivatives(grid, config.scale, j, b);
            let step = if h > T::zero() { g / h } else { g };
            let step = step.max(-T::one()).min(T::one());
            let next = project(b - step, Some(config.clamp));
            let moved = (next - b).abs();
            b = next;
            if moved < T::lit(1e-12) {
                break;
            }
        }
        b
    }

    /// `-Σ_k Σ_j [r_jk ln P_jk + (n_k - r_jk) ln Q_jk]`.
    fn q_function(&self, grid: &QuadratureGrid<T>, scale: T, b: &[T]) -> T {
        let bank = ItemBank::with_scale(b.to_vec(), scale).expect("finite difficulties");
        let mut total = T::zero();
        for (k, &theta) in grid.nodes().iter().enumerate() {
            for j in 0..b.len() {
                let (lp, lq) = bank.log_icc_pair(theta, j);
                total -= self.r[j][k] * lp + (self.n[k] - self.r[j][k]) * lq;
            }
        }
        total
    }
}
