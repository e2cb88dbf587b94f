//! Aberrant-response data generators, accuracy metrics and the seeded
//! replication harness.
//!
//! Replication `r` of a study with master seed `s` draws from a ChaCha8
//! generator seeded with `s` on stream `r`, so results do not depend on the
//! number of workers or their scheduling. Within a replication all clean
//! draws (abilities, then responses row by row) precede the contamination
//! draws.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IrtError, Result};
use crate::mm::{fit_set, FitConfig};
use crate::model::{ItemBank, ResponseMatrix};
use crate::objectives::{Hyperparameter, PatternSet};
use crate::scalar::Real;

/// Largest tolerated fraction of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// Source of aberrant responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scenario {
    /// Guessing independent of ability, governed by prevalence and severity.
    UniformGuess,
    /// Guessing whose per-cell probability decreases with ability.
    AbilityDependent,
    Clean,
}

/// Distribution of a guessed response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GuessType {
    #[default]
    Unbiased,
    Biased,
}

impl GuessType {
    /// Probability that a guessed response is correct.
    pub fn success_probability(self) -> f64 {
        match self {
            GuessType::Unbiased => 0.5,
            GuessType::Biased => 0.2,
        }
    }
}

/// Ability-dependent guessing probability `R(θ) = 1 / (1 + exp(a (θ + c)))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    /// `a = 0.5`, `c = 5`: gradual increase over a wide ability range.
    #[default]
    R1,
    /// `a = 1.5`, `c = 2`: sharp increase at low ability.
    R2,
}

impl Mechanism {
    fn coefficients(self) -> (f64, f64) {
        match self {
            Mechanism::R1 => (0.5, 5.0),
            Mechanism::R2 => (1.5, 2.0),
        }
    }

    pub fn probability(self, theta: f64) -> f64 {
        let (a, c) = self.coefficients();
        1.0 / (1.0 + (a * (theta + c)).exp())
    }

    /// `points` evenly spaced samples `(θ, R(θ))` over `[lo, hi]`.
    pub fn curve(self, lo: f64, hi: f64, points: usize) -> Vec<(f64, f64)> {
        let step = if points > 1 {
            (hi - lo) / (points - 1) as f64
        } else {
            0.0
        };
        (0..points)
            .map(|i| {
                let theta = lo + step * i as f64;
                (theta, self.probability(theta))
            })
            .collect()
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::R1 => "R1",
            Mechanism::R2 => "R2",
        })
    }
}

impl FromStr for Mechanism {
    type Err = IrtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "R1" => Ok(Mechanism::R1),
            "R2" => Ok(Mechanism::R2),
            other => Err(IrtError::Config {
                field: "mechanism",
                reason: format!("expected R1 or R2, got `{other}`"),
            }),
        }
    }
}

/// One data-generating condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    #[serde(default)]
    pub guess_type: GuessType,
    /// Fraction of respondents who guess (uniform guessing only).
    #[serde(default)]
    pub prevalence: f64,
    /// Fraction of items a guessing respondent guesses on (uniform guessing only).
    #[serde(default)]
    pub severity: f64,
    #[serde(default)]
    pub mechanism: Mechanism,
    /// Number of respondents `I`.
    #[serde(alias = "I")]
    pub respondents: usize,
    /// Number of items `J`.
    #[serde(alias = "J")]
    pub items: usize,
}

impl ScenarioSpec {
    pub fn clean(respondents: usize, items: usize) -> Self {
        Self {
            scenario: Scenario::Clean,
            guess_type: GuessType::Unbiased,
            prevalence: 0.0,
            severity: 0.0,
            mechanism: Mechanism::R1,
            respondents,
            items,
        }
    }

    pub fn uniform_guess(
        guess_type: GuessType,
        prevalence: f64,
        severity: f64,
        respondents: usize,
        items: usize,
    ) -> Self {
        Self {
            scenario: Scenario::UniformGuess,
            guess_type,
            prevalence,
            severity,
            ..Self::clean(respondents, items)
        }
    }

    pub fn ability_dependent(
        guess_type: GuessType,
        mechanism: Mechanism,
        respondents: usize,
        items: usize,
    ) -> Self {
        Self {
            scenario: Scenario::AbilityDependent,
            guess_type,
            mechanism,
            ..Self::clean(respondents, items)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.respondents == 0 {
            return Err(config("respondents", "must be at least 1"));
        }
        if self.items == 0 {
            return Err(config("items", "must be at least 1"));
        }
        for (field, v) in [("prevalence", self.prevalence), ("severity", self.severity)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config(field, &format!("must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Expected number of guessed cells.
    pub fn expected_guessed_cells(&self) -> f64 {
        let cells = (self.respondents * self.items) as f64;
        match self.scenario {
            Scenario::Clean => 0.0,
            Scenario::UniformGuess => cells * self.prevalence * self.severity,
            Scenario::AbilityDependent => {
                let grid = crate::quadrature::QuadratureGrid::<f64>::gauss_hermite(80)
                    .expect("80-node rule is valid");
                cells * grid.expect(|t| self.mechanism.probability(t))
            }
        }
    }
}

fn config(field: &'static str, reason: &str) -> IrtError {
    IrtError::Config {
        field,
        reason: reason.to_string(),
    }
}

/// `J` difficulties evenly spaced over `[-2, 2]`, endpoints included.
pub fn true_difficulties<T: Real>(items: usize) -> Result<ItemBank<T>> {
    let b = match items {
        0 => return Err(IrtError::EmptyBank),
        1 => vec![T::zero()],
        _ => (0..items)
            .map(|j| T::lit(-2.0 + 4.0 * j as f64 / (items - 1) as f64))
            .collect(),
    };
    ItemBank::new(b)
}

/// Generated responses together with the latent draws behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDataset {
    pub responses: ResponseMatrix,
    pub abilities: Vec<f64>,
    pub true_bank: ItemBank<f64>,
    /// `guess_mask[i][j]` is set whenever cell `(i, j)` was redrawn from the guess law.
    pub guess_mask: Vec<Vec<bool>>,
    pub guesser_flags: Vec<bool>,
}

impl SimulatedDataset {
    pub fn guessers(&self) -> usize {
        self.guesser_flags.iter().filter(|&&g| g).count()
    }

    pub fn guessed_cells(&self) -> usize {
        self.guess_mask.iter().flatten().filter(|&&g| g).count()
    }
}

/// Generator for replication `rep` under master seed `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// One dataset from `spec` with the stream-zero generator of `seed`.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<SimulatedDataset> {
    generate_with_rng(spec, &mut replication_rng(seed, 0))
}

pub fn generate_with_rng<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    rng: &mut R,
) -> Result<SimulatedDataset> {
    spec.validate()?;
    let bank = true_difficulties::<f64>(spec.items)?;
    let (abilities, mut bits) = draw_clean(&bank, spec.respondents, rng);
    let (n, j) = (spec.respondents, spec.items);
    let mut guess_mask = vec![vec![false; j]; n];
    let mut guesser_flags = vec![false; n];
    let r = spec.guess_type.success_probability();

    match spec.scenario {
        Scenario::Clean => {}
        Scenario::UniformGuess => {
            for i in 0..n {
                if rng.random::<f64>() >= spec.prevalence {
                    continue;
                }
                guesser_flags[i] = true;
                for k in 0..j {
                    if rng.random::<f64>() < spec.severity {
                        guess_mask[i][k] = true;
                        bits[i][k] = u8::from(rng.random::<f64>() < r);
                    }
                }
            }
        }
        Scenario::AbilityDependent => {
            for i in 0..n {
                let p = spec.mechanism.probability(abilities[i]);
                for k in 0..j {
                    if rng.random::<f64>() < p {
                        guess_mask[i][k] = true;
                        guesser_flags[i] = true;
                        bits[i][k] = u8::from(rng.random::<f64>() < r);
                    }
                }
            }
        }
    }

    Ok(SimulatedDataset {
        responses: ResponseMatrix::from_bits(bits)?,
        abilities,
        true_bank: bank,
        guess_mask,
        guesser_flags,
    })
}

/// `θ_i ~ N(0, 1)` and model responses at `bank`.
pub fn draw_clean<R: Rng + ?Sized>(
    bank: &ItemBank<f64>,
    respondents: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<Vec<u8>>) {
    let abilities: Vec<f64> = (0..respondents)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let bits = abilities
        .iter()
        .map(|&t| {
            (0..bank.len())
                .map(|k| u8::from(rng.random::<f64>() < bank.icc(t, k)))
                .collect()
        })
        .collect();
    (abilities, bits)
}

/// Clean model responses at `bank` as a response matrix.
pub fn simulate_clean<R: Rng + ?Sized>(
    bank: &ItemBank<f64>,
    respondents: usize,
    rng: &mut R,
) -> Result<ResponseMatrix> {
    ResponseMatrix::from_bits(draw_clean(bank, respondents, rng).1)
}

/// Bias and RMSE of a single item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics<T> {
    pub bias: T,
    pub rmse: T,
}

/// Accuracy of difficulty estimates, for one fit or averaged over replications.
///
/// `bias` and `rmse` are replication averages of `(1/J) Σ_j (b̂_j − b_j)` and
/// `((1/J) Σ_j (b̂_j − b_j)²)^½`. Per item, `bias` is the mean deviation and
/// `rmse` the root mean squared deviation over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary<T> {
    pub bias: T,
    pub rmse: T,
    pub per_item: Vec<ItemMetrics<T>>,
    pub replications: usize,
}

pub fn bias_rmse<T: Real>(b_hat: &[T], b_true: &[T]) -> Result<MetricsSummary<T>> {
    if b_hat.len() != b_true.len() {
        return Err(IrtError::LengthMismatch {
            left: b_hat.len(),
            right: b_true.len(),
        });
    }
    if b_hat.is_empty() {
        return Err(IrtError::EmptyBank);
    }
    let j = T::from_count(b_hat.len());
    let d: Vec<T> = b_hat.iter().zip(b_true).map(|(&h, &t)| h - t).collect();
    Ok(MetricsSummary {
        bias: d.iter().copied().sum::<T>() / j,
        rmse: (d.iter().map(|&x| x * x).sum::<T>() / j).sqrt(),
        per_item: d
            .iter()
            .map(|&x| ItemMetrics {
                bias: x,
                rmse: x.abs(),
            })
            .collect(),
        replications: 1,
    })
}

/// Outcome of one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord<T> {
    pub replication: usize,
    pub method: String,
    pub difficulties: Vec<T>,
    pub bias: T,
    pub rmse: T,
    pub converged: bool,
    pub iterations: usize,
    pub clamped_items: Vec<usize>,
}

/// Aggregated accuracy of one method with Monte-Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary<T> {
    pub method: String,
    pub hyper: Hyperparameter,
    pub metrics: MetricsSummary<T>,
    /// Standard error of the averaged bias across replications.
    pub bias_se: T,
    /// Standard error of the averaged RMSE across replications.
    pub rmse_se: T,
    pub failures: usize,
    pub non_converged: usize,
    pub clamped_fits: usize,
}

/// Full output of [`run_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport<T> {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub replications: usize,
    pub true_difficulties: Vec<T>,
    pub methods: Vec<MethodSummary<T>>,
    /// Successful fits in replication order, methods in configuration order.
    pub records: Vec<ReplicationRecord<T>>,
}

impl<T: Real> StudyReport<T> {
    /// Records of one method, by replication index.
    pub fn records_for(&self, method: &str) -> impl Iterator<Item = &ReplicationRecord<T>> {
        let method = method.to_string();
        self.records.iter().filter(move |r| r.method == method)
    }
}

/// Runs `map` over `0..replications` on `workers` threads (all cores when
/// `None`), returning results in replication order.
pub(crate) fn run_replications<R: Send>(
    replications: usize,
    workers: Option<usize>,
    map: impl Fn(usize) -> R + Sync + Send,
) -> Result<Vec<R>> {
    let run = || (0..replications).into_par_iter().map(&map).collect();
    match workers {
        None => Ok(run()),
        Some(0) => Err(config("workers", "must be at least 1")),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| config("workers", &e.to_string()))
            .map(|pool| pool.install(run)),
    }
}

pub(crate) fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(IrtError::TooManyFailures { failed, total });
    }
    Ok(())
}

/// Repeats generate-then-fit `replications` times, fitting every method on
/// the same dataset within a replication.
///
/// A method whose fit errors in a replication is skipped there and counted;
/// the study aborts when any method fails in more than 5% of replications.
pub fn run_study<T: Real>(
    spec: &ScenarioSpec,
    methods: &[FitConfig<T>],
    replications: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<StudyReport<T>> {
    spec.validate()?;
    if replications == 0 {
        return Err(config("replications", "must be at least 1"));
    }
    if methods.is_empty() {
        return Err(config("methods", "at least one method is required"));
    }
    let labels: Vec<String> = methods.iter().map(|m| m.hyper.label()).collect();
    if let Some(dup) = labels
        .iter()
        .enumerate()
        .find(|(i, l)| labels[..*i].contains(l))
    {
        return Err(config("methods", &format!("duplicate method `{}`", dup.1)));
    }
    for m in methods {
        m.validate(spec.items)?;
    }
    let truth: Vec<T> = true_difficulties::<T>(spec.items)?.difficulties().to_vec();

    let per_rep = run_replications(replications, workers, |rep| {
        let data = generate_with_rng(spec, &mut replication_rng(seed, rep as u64))?;
        let set = PatternSet::from_matrix(&data.responses);
        let fits: Vec<Option<ReplicationRecord<T>>> = methods
            .iter()
            .zip(&labels)
            .map(|(cfg, label)| {
                let fit = fit_set(&set, cfg).ok()?;
                let m = bias_rmse(&fit.difficulties, &truth).ok()?;
                Some(ReplicationRecord {
                    replication: rep,
                    method: label.clone(),
                    difficulties: fit.difficulties,
                    bias: m.bias,
                    rmse: m.rmse,
                    converged: fit.converged,
                    iterations: fit.iterations,
                    clamped_items: fit.clamped_items,
                })
            })
            .collect();
        Ok(fits)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut summaries = Vec::with_capacity(methods.len());
    for (m, (cfg, label)) in methods.iter().zip(&labels).enumerate() {
        let recs: Vec<&ReplicationRecord<T>> =
            per_rep.iter().filter_map(|r| r[m].as_ref()).collect();
        let failures = replications - recs.len();
        check_failures(failures, replications)?;
        summaries.push(summarize(label, cfg.hyper, &recs, &truth, failures));
    }
    let records = per_rep.into_iter().flatten().flatten().collect();
    Ok(StudyReport {
        spec: spec.clone(),
        seed,
        replications,
        true_difficulties: truth,
        methods: summaries,
        records,
    })
}

fn summarize<T: Real>(
    label: &str,
    hyper: Hyperparameter,
    recs: &[&ReplicationRecord<T>],
    truth: &[T],
    failures: usize,
) -> MethodSummary<T> {
    let n = recs.len();
    let (bias, bias_se) = mean_and_se(recs.iter().map(|r| r.bias));
    let (rmse, rmse_se) = mean_and_se(recs.iter().map(|r| r.rmse));
    let per_item = (0..truth.len())
        .map(|j| {
            let d: Vec<T> = recs.iter().map(|r| r.difficulties[j] - truth[j]).collect();
            let count = T::from_count(n.max(1));
            ItemMetrics {
                bias: d.iter().copied().sum::<T>() / count,
                rmse: (d.iter().map(|&x| x * x).sum::<T>() / count).sqrt(),
            }
        })
        .collect();
    MethodSummary {
        method: label.to_string(),
        hyper,
        metrics: MetricsSummary {
            bias,
            rmse,
            per_item,
            replications: n,
        },
        bias_se,
        rmse_se,
        failures,
        non_converged: recs.iter().filter(|r| !r.converged).count(),
        clamped_fits: recs.iter().filter(|r| !r.clamped_items.is_empty()).count(),
    }
}

/// Sample mean and its standard error (zero for fewer than two values).
pub(crate) fn mean_and_se<T: Real>(values: impl Iterator<Item = T> + Clone) -> (T, T) {
    let n = values.clone().count();
    if n == 0 {
        return (T::nan(), T::nan());
    }
    let nt = T::from_count(n);
    let mean = values.clone().sum::<T>() / nt;
    if n < 2 {
        return (mean, T::zero());
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<T>() / T::from_count(n - 1);
    (mean, (var / nt).sqrt())
}
