//! Empirical influence functions `IF(u) = -V̂⁻¹ ψ(b̂; u)` and gross-error
//! sensitivities over all response patterns.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{guarded_inverse, EstimatingFunction};
use crate::error::{IrtError, Result};
use crate::linalg::{norm2, Matrix};
use crate::mm::{fit_set, FitConfig};
use crate::model::{ItemBank, ResponseMatrix, ResponsePattern};
use crate::objectives::{check_items, to_f64, Hyperparameter, PatternSet};
use crate::quadrature::QuadratureGrid;
use crate::scalar::Real;
use crate::simulation::{check_failures, replication_rng, run_replications, simulate_clean};

/// Largest test length whose `2^J` patterns are enumerated.
pub const MAX_ENUMERATED_ITEMS: usize = 20;

/// Relative gap below which two pattern probabilities count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Influence functions of one fitted estimator.
#[derive(Debug, Clone)]
pub struct InfluenceEvaluator<T> {
    ef: EstimatingFunction<T>,
    v_inv: Matrix<T>,
}

impl<T: Real> InfluenceEvaluator<T> {
    /// Builds `V̂` at `b_hat` from `data`; fails if `V̂` is singular.
    pub fn new(
        hyper: Hyperparameter,
        b_hat: &ItemBank<T>,
        data: &ResponseMatrix,
        grid: &QuadratureGrid<T>,
    ) -> Result<Self> {
        check_items(data, b_hat)?;
        Self::on_set(hyper, b_hat, &PatternSet::from_matrix(data), grid)
    }

    pub(crate) fn on_set(
        hyper: Hyperparameter,
        b_hat: &ItemBank<T>,
        set: &PatternSet,
        grid: &QuadratureGrid<T>,
    ) -> Result<Self> {
        let ef = EstimatingFunction::new(hyper, b_hat, grid);
        let (v, _) = ef.moments_on_set(set)?;
        let (v_inv, _) = guarded_inverse(&v)?;
        Ok(Self { ef, v_inv })
    }

    pub fn influence(&self, u: &ResponsePattern) -> Result<Vec<T>> {
        let psi = self.ef.psi(u)?;
        Ok(self.v_inv.mul_vec(&psi).into_iter().map(|x| -x).collect())
    }

    /// `‖IF(u)‖₂`.
    pub fn norm(&self, u: &ResponsePattern) -> Result<T> {
        Ok(norm2(&self.influence(u)?))
    }
}

/// `-V̂⁻¹ ψ(b̂; u)` with `V̂` the mean Jacobian over `data`.
pub fn influence_function<T: Real>(
    hyper: Hyperparameter,
    b_hat: &ItemBank<T>,
    u: &ResponsePattern,
    data: &ResponseMatrix,
    grid: &QuadratureGrid<T>,
) -> Result<Vec<T>> {
    InfluenceEvaluator::new(hyper, b_hat, data, grid)?.influence(u)
}

/// All `2^J` patterns in lexicographic order (item one most significant).
pub fn enumerate_patterns(items: usize) -> Result<Vec<ResponsePattern>> {
    if items > MAX_ENUMERATED_ITEMS {
        return Err(IrtError::EnumerationCap {
            items,
            cap: MAX_ENUMERATED_ITEMS,
        });
    }
    if items == 0 {
        return Err(IrtError::EmptyBank);
    }
    Ok((0..1u64 << items)
        .map(|i| ResponsePattern::from_index(i, items))
        .collect())
}

/// Marginal probabilities of `patterns` at `bank`.
pub fn pattern_probabilities<T: Real>(
    bank: &ItemBank<T>,
    patterns: &[ResponsePattern],
    grid: &QuadratureGrid<T>,
) -> Vec<T> {
    patterns
        .iter()
        .map(|u| bank.marginal_pattern_prob(u, grid))
        .collect()
}

/// Sorts by descending probability; near-ties go to the lexicographically
/// larger pattern first.
fn order_patterns<T: Real>(patterns: &mut Vec<ResponsePattern>, probs: &mut Vec<T>) {
    let mut idx: Vec<usize> = (0..patterns.len()).collect();
    idx.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("finite probabilities")
    });
    let mut ordered = Vec::with_capacity(idx.len());
    let mut start = 0;
    while start < idx.len() {
        let lead = to_f64(probs[idx[start]]);
        let mut end = start + 1;
        while end < idx.len() && (lead - to_f64(probs[idx[end]])) <= TIE_TOLERANCE * lead.abs() {
            end += 1;
        }
        let mut group = idx[start..end].to_vec();
        group.sort_by(|&a, &b| patterns[b].cmp(&patterns[a]));
        ordered.extend(group);
        start = end;
    }
    *patterns = ordered.iter().map(|&i| patterns[i].clone()).collect();
    *probs = ordered.iter().map(|&i| probs[i]).collect();
}

/// Replication-averaged influence norms for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodInfluence<T> {
    pub method: String,
    pub hyper: Hyperparameter,
    /// Mean `‖IF(u)‖₂` per pattern, aligned with [`InfluenceReport::patterns`].
    pub norms: Vec<T>,
    /// Maximum of `norms`.
    pub gross_error_sensitivity: T,
}

/// Pattern-by-method influence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport<T> {
    pub true_difficulties: Vec<T>,
    pub respondents: usize,
    pub seed: u64,
    /// Patterns by descending model probability.
    pub patterns: Vec<ResponsePattern>,
    /// Model probabilities at the true difficulties.
    pub probabilities: Vec<T>,
    pub methods: Vec<MethodInfluence<T>>,
    pub replications: usize,
    /// Replications skipped because a fit or a `V̂` inversion failed.
    pub failures: usize,
}

/// Simulates clean data at `b_true`, fits each method and averages the
/// influence norm of every pattern over replications.
///
/// A replication in which any method fails is skipped for all methods, so
/// columns average over the same datasets; more than 5% skipped aborts.
pub fn influence_table<T: Real>(
    b_true: &ItemBank<T>,
    respondents: usize,
    methods: &[FitConfig<T>],
    replications: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<InfluenceReport<T>> {
    let items = b_true.len();
    let patterns = enumerate_patterns(items)?;
    if replications == 0 || respondents == 0 || methods.is_empty() {
        return Err(IrtError::Config {
            field: "influence",
            reason: "replications, respondents and methods must all be non-empty".into(),
        });
    }
    for m in methods {
        m.validate(items)?;
    }
    let truth64 = ItemBank::with_scale(
        b_true.difficulties().iter().map(|&b| to_f64(b)).collect(),
        to_f64(b_true.scale()),
    )?;
    let grids = methods
        .iter()
        .map(|m| QuadratureGrid::gauss_hermite(m.nodes))
        .collect::<Result<Vec<_>>>()?;

    let per_rep = run_replications(
        replications,
        workers,
        |rep| -> Result<Option<Vec<Vec<T>>>> {
            let data = simulate_clean(
                &truth64,
                respondents,
                &mut replication_rng(seed, rep as u64),
            )?;
            let set = PatternSet::from_matrix(&data);
            let mut out = Vec::with_capacity(methods.len());
            for (cfg, grid) in methods.iter().zip(&grids) {
                let norms = fit_set(&set, cfg).and_then(|fit| {
                    let bank = fit.bank(cfg.scale)?;
                    let eval = InfluenceEvaluator::on_set(cfg.hyper, &bank, &set, grid)?;
                    patterns
                        .iter()
                        .map(|u| eval.norm(u))
                        .collect::<Result<Vec<T>>>()
                });
                match norms {
                    Ok(n) => out.push(n),
                    Err(_) => return Ok(None),
                }
            }
            Ok(Some(out))
        },
    )?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let ok: Vec<&Vec<Vec<T>>> = per_rep.iter().flatten().collect();
    let failures = replications - ok.len();
    check_failures(failures, replications)?;

    let mut probabilities = pattern_probabilities(b_true, &patterns, &QuadratureGrid::standard());
    let mut ordered = patterns.clone();
    order_patterns(&mut ordered, &mut probabilities);
    let position: std::collections::HashMap<&ResponsePattern, usize> =
        patterns.iter().enumerate().map(|(i, u)| (u, i)).collect();

    let count = T::from_count(ok.len());
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(m, cfg)| {
            let norms: Vec<T> = ordered
                .iter()
                .map(|u| {
                    let p = position[u];
                    ok.iter().map(|rep| rep[m][p]).sum::<T>() / count
                })
                .collect();
            let gross_error_sensitivity = norms.iter().copied().fold(T::zero(), T::max);
            MethodInfluence {
                method: cfg.hyper.label(),
                hyper: cfg.hyper,
                norms,
                gross_error_sensitivity,
            }
        })
        .collect();

    Ok(InfluenceReport {
        true_difficulties: b_true.difficulties().to_vec(),
        respondents,
        seed,
        patterns: ordered,
        probabilities,
        methods: summaries,
        replications,
        failures,
    })
}

impl<T: Real> InfluenceReport<T> {
    /// Averaged norm of `pattern` under `method` (a label such as `dpd:0.5`).
    pub fn norm(&self, method: &str, pattern: &ResponsePattern) -> Option<T> {
        let p = self.patterns.iter().position(|u| u == pattern)?;
        let m = self.methods.iter().find(|m| m.method == method)?;
        Some(m.norms[p])
    }

    pub fn probability(&self, pattern: &ResponsePattern) -> Option<T> {
        let p = self.patterns.iter().position(|u| u == pattern)?;
        Some(self.probabilities[p])
    }
}
