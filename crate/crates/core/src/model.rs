//! The one-parameter logistic model: item characteristic curves, conditional
//! and marginal pattern probabilities, the score `ξ` and its Jacobian `Σ`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{IrtError, Result};
use crate::linalg::Matrix;
use crate::quadrature::QuadratureGrid;
use crate::scalar::{log_sum_exp, softplus, Real};

/// Conventional logistic-to-normal-ogive scale constant.
pub const DEFAULT_SCALE: f64 = 1.702;

/// Item difficulties `b` and the fixed scale `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemBank<T> {
    difficulties: Vec<T>,
    scale: T,
}

impl<T: Real> ItemBank<T> {
    pub fn new(difficulties: Vec<T>) -> Result<Self> {
        Self::with_scale(difficulties, T::lit(DEFAULT_SCALE))
    }

    pub fn with_scale(difficulties: Vec<T>, scale: T) -> Result<Self> {
        if difficulties.is_empty() {
            return Err(IrtError::EmptyBank);
        }
        if let Some(index) = difficulties.iter().position(|b| !b.is_finite()) {
            return Err(IrtError::NonFiniteDifficulty { index });
        }
        if !(scale.is_finite() && scale > T::zero()) {
            return Err(IrtError::InvalidScale(scale.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self {
            difficulties,
            scale,
        })
    }

    /// A bank with the same scale and new difficulties.
    pub fn with_difficulties(&self, difficulties: Vec<T>) -> Result<Self> {
        Self::with_scale(difficulties, self.scale)
    }

    pub fn difficulties(&self) -> &[T] {
        &self.difficulties
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.difficulties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.difficulties.is_empty()
    }

    /// `D (θ - b_j)`, the logit of a correct response.
    #[inline]
    pub fn logit(&self, theta: T, j: usize) -> T {
        self.scale * (theta - self.difficulties[j])
    }

    /// `P_j(θ)`, strictly inside `(0, 1)` even when the logistic saturates.
    #[inline]
    pub fn icc(&self, theta: T, j: usize) -> T {
        clamp_open(sigmoid(self.logit(theta, j)))
    }

    /// `(P_j(θ), Q_j(θ))`, each evaluated without cancellation.
    #[inline]
    pub fn icc_pair(&self, theta: T, j: usize) -> (T, T) {
        let x = self.logit(theta, j);
        (clamp_open(sigmoid(x)), clamp_open(sigmoid(-x)))
    }

    /// `(ln P_j(θ), ln Q_j(θ))`.
    #[inline]
    pub fn log_icc_pair(&self, theta: T, j: usize) -> (T, T) {
        let x = self.logit(theta, j);
        (-softplus(-x), -softplus(x))
    }

    /// `ln q(u | θ; b)`.
    ///
    /// # Panics
    /// If the pattern length differs from the bank length.
    pub fn log_pattern_prob_given_theta(&self, u: &ResponsePattern, theta: T) -> T {
        self.assert_pattern(u);
        u.bits()
            .iter()
            .enumerate()
            .map(|(j, &bit)| {
                let (lp, lq) = self.log_icc_pair(theta, j);
                if bit == 1 {
                    lp
                } else {
                    lq
                }
            })
            .sum()
    }

    /// `q(u | θ; b) = Π_j P_j^{u_j} Q_j^{1-u_j}`.
    pub fn pattern_prob_given_theta(&self, u: &ResponsePattern, theta: T) -> T {
        self.log_pattern_prob_given_theta(u, theta).exp()
    }

    /// `ln q(u; b)`, the log of the quadrature marginal.
    pub fn log_marginal_pattern_prob(&self, u: &ResponsePattern, grid: &QuadratureGrid<T>) -> T {
        log_sum_exp(
            grid.nodes()
                .iter()
                .zip(grid.weights())
                .map(|(&t, &w)| w.ln() + self.log_pattern_prob_given_theta(u, t)),
        )
    }

    /// `q(u; b) = Σ_k w_k q(u | θ_k; b)`.
    pub fn marginal_pattern_prob(&self, u: &ResponsePattern, grid: &QuadratureGrid<T>) -> T {
        self.log_marginal_pattern_prob(u, grid).exp()
    }

    /// `ξ(θ, b; u) = ∇_b ln q(u | θ; b)`.
    pub fn score_xi(&self, u: &ResponsePattern, theta: T) -> Vec<T> {
        self.assert_pattern(u);
        u.bits()
            .iter()
            .enumerate()
            .map(|(j, &bit)| {
                let (p, q) = self.icc_pair(theta, j);
                if bit == 1 {
                    -self.scale * q
                } else {
                    self.scale * p
                }
            })
            .collect()
    }

    /// Diagonal of `Σ(θ, b) = ∂ξ/∂bᵀ`, `-D² P_j Q_j`; independent of `u`.
    pub fn score_jacobian_diag(&self, theta: T) -> Vec<T> {
        let d2 = self.scale * self.scale;
        (0..self.len())
            .map(|j| {
                let (p, q) = self.icc_pair(theta, j);
                -d2 * p * q
            })
            .collect()
    }

    /// `Σ(θ, b)` as a dense diagonal matrix.
    pub fn score_jacobian(&self, theta: T) -> Matrix<T> {
        Matrix::from_diag(&self.score_jacobian_diag(theta))
    }

    /// Checks that `u` is a pattern over this bank's items.
    pub fn check_pattern(&self, u: &ResponsePattern) -> Result<()> {
        if u.len() != self.len() {
            return Err(IrtError::PatternLength {
                expected: self.len(),
                found: u.len(),
            });
        }
        Ok(())
    }

    fn assert_pattern(&self, u: &ResponsePattern) {
        assert_eq!(u.len(), self.len(), "response pattern length must equal J");
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn clamp_open<T: Real>(p: T) -> T {
    let upper = T::one() - T::epsilon() * T::lit(0.5);
    p.max(T::prob_floor()).min(upper)
}

/// One respondent's binary responses, item order matching the bank.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ResponsePattern {
    bits: Vec<u8>,
}

impl ResponsePattern {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(IrtError::NonBinaryResponse { index, value });
        }
        Ok(Self { bits })
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self {
            bits: bits.iter().map(|&b| u8::from(b)).collect(),
        }
    }

    /// The `index`-th of the `2^J` patterns in lexicographic order; item 1 is
    /// the most significant bit.
    ///
    /// # Panics
    /// If `items > 63` or `index >= 2^items`.
    pub fn from_index(index: u64, items: usize) -> Self {
        assert!(
            items < 64 && index >> items == 0,
            "pattern index out of range"
        );
        Self {
            bits: (0..items)
                .map(|j| ((index >> (items - 1 - j)) & 1) as u8)
                .collect(),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_correct(&self, j: usize) -> bool {
        self.bits[j] == 1
    }

    pub fn total_score(&self) -> usize {
        self.bits.iter().map(|&b| usize::from(b)).sum()
    }

    /// Bits negated and item order reversed; the mirror image of `u` under
    /// `θ ↦ -θ` when the difficulties are symmetric about zero.
    pub fn flipped_reversed(&self) -> Self {
        Self {
            bits: self.bits.iter().rev().map(|&b| 1 - b).collect(),
        }
    }
}

impl TryFrom<Vec<u8>> for ResponsePattern {
    type Error = IrtError;

    fn try_from(bits: Vec<u8>) -> Result<Self> {
        Self::new(bits)
    }
}

impl From<ResponsePattern> for Vec<u8> {
    fn from(u: ResponsePattern) -> Self {
        u.bits
    }
}

impl fmt::Display for ResponsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (j, b) in self.bits.iter().enumerate() {
            if j > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{b}")?;
        }
        f.write_str(")")
    }
}

/// `I × J` binary responses with respondent identifiers and item labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    rows: Vec<ResponsePattern>,
    row_ids: Vec<String>,
    item_labels: Vec<String>,
}

impl ResponseMatrix {
    /// Rows with synthetic identifiers `r1, r2, …` and labels `item1, item2, …`.
    pub fn new(rows: Vec<ResponsePattern>) -> Result<Self> {
        let ids = (1..=rows.len()).map(|i| format!("r{i}")).collect();
        Self::with_ids(rows, ids)
    }

    pub fn with_ids(rows: Vec<ResponsePattern>, row_ids: Vec<String>) -> Result<Self> {
        let first = rows.first().ok_or(IrtError::EmptyMatrix)?;
        let items = first.len();
        if items == 0 {
            return Err(IrtError::EmptyBank);
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != items) {
            return Err(IrtError::PatternLength {
                expected: items,
                found: bad.len(),
            });
        }
        if row_ids.len() != rows.len() {
            return Err(IrtError::RowIdMismatch {
                rows: rows.len(),
                ids: row_ids.len(),
            });
        }
        Ok(Self {
            rows,
            row_ids,
            item_labels: synthetic_labels(items),
        })
    }

    /// Convenience constructor from raw `0/1` rows.
    pub fn from_bits(rows: Vec<Vec<u8>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(ResponsePattern::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn with_item_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_items() {
            return Err(IrtError::LengthMismatch {
                left: self.n_items(),
                right: labels.len(),
            });
        }
        self.item_labels = labels;
        Ok(self)
    }

    pub fn rows(&self) -> &[ResponsePattern] {
        &self.rows
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn item_labels(&self) -> &[String] {
        &self.item_labels
    }

    pub fn n_respondents(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.rows[0].len()
    }
}

fn synthetic_labels(items: usize) -> Vec<String> {
    (1..=items).map(|j| format!("item{j}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn five_item_bank() -> ItemBank<f64> {
        ItemBank::new(vec![-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap()
    }

    fn pat(bits: &[u8]) -> ResponsePattern {
        ResponsePattern::new(bits.to_vec()).unwrap()
    }

    #[test]
    fn icc_at_difficulty_is_one_half() {
        let bank = five_item_bank();
        for j in 0..5 {
            assert_abs_diff_eq!(bank.icc(bank.difficulties()[j], j), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn icc_reference_value() {
        // 1 / (1 + exp(-3.404)) to 30 digits: 0.967829311572104074903624555702.
        let bank = five_item_bank();
        assert_relative_eq!(
            bank.icc(0.0, 0),
            0.967_829_311_572_104_1,
            max_relative = 1e-15
        );
    }

    #[test]
    fn icc_saturation_stays_open() {
        let bank = ItemBank::<f64>::new(vec![0.0]).unwrap();
        assert!(bank.icc(10.0, 0) > 0.9999999);
        let hi = bank.icc(1e6, 0);
        let lo = bank.icc(-1e6, 0);
        assert!(hi < 1.0 && hi > 0.0);
        assert!(lo > 0.0 && lo < 1.0);
        let (lp, lq) = bank.log_icc_pair(-1e3, 0);
        assert!(lp.is_finite() && lq <= 0.0);
    }

    #[test]
    fn conditional_pattern_probabilities() {
        let one = ItemBank::new(vec![0.3]).unwrap();
        assert_abs_diff_eq!(
            one.pattern_prob_given_theta(&pat(&[1]), 0.3),
            0.5,
            epsilon = 1e-15
        );
        let two = ItemBank::new(vec![0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            two.pattern_prob_given_theta(&pat(&[1, 0]), 0.0),
            0.25,
            epsilon = 1e-15
        );

        let bank = five_item_bank();
        let u = pat(&[1, 1, 0, 0, 0]);
        let oracle: f64 = bank
            .difficulties()
            .iter()
            .zip(u.bits())
            .map(|(&b, &x)| {
                let p = 1.0 / (1.0 + (-1.702 * (0.0 - b)).exp());
                if x == 1 {
                    p
                } else {
                    1.0 - p
                }
            })
            .product();
        assert_relative_eq!(
            bank.pattern_prob_given_theta(&u, 0.0),
            oracle,
            max_relative = 1e-13
        );
    }

    #[test]
    fn five_item_marginal_probabilities() {
        let bank = five_item_bank();
        let grid = QuadratureGrid::standard();
        let pct = |b: &[u8]| 100.0 * bank.marginal_pattern_prob(&pat(b), &grid);
        assert_abs_diff_eq!(pct(&[1, 1, 0, 0, 0]), 23.637, epsilon = 5e-4);
        assert_abs_diff_eq!(pct(&[1, 0, 0, 0, 0]), 13.059, epsilon = 5e-4);
        assert_abs_diff_eq!(pct(&[0, 0, 0, 0, 0]), 4.170, epsilon = 5e-4);
        assert_abs_diff_eq!(pct(&[0, 0, 1, 1, 1]), 0.001, epsilon = 5e-4);
    }

    #[test]
    fn marginals_sum_to_one() {
        let bank = five_item_bank();
        let grid = QuadratureGrid::standard();
        let total: f64 = (0..32)
            .map(|i| bank.marginal_pattern_prob(&ResponsePattern::from_index(i, 5), &grid))
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn marginals_are_stable_under_grid_refinement() {
        let bank = five_item_bank();
        let coarse = QuadratureGrid::gauss_hermite(21).unwrap();
        let fine = QuadratureGrid::gauss_hermite(61).unwrap();
        for i in 0..32 {
            let u = ResponsePattern::from_index(i, 5);
            let diff =
                bank.marginal_pattern_prob(&u, &coarse) - bank.marginal_pattern_prob(&u, &fine);
            assert!(diff.abs() < 1e-6, "{u}: {diff}");
        }
    }

    #[test]
    fn mirror_symmetric_patterns_share_probability() {
        let bank = five_item_bank();
        let grid = QuadratureGrid::standard();
        for i in 0..32 {
            let u = ResponsePattern::from_index(i, 5);
            assert_relative_eq!(
                bank.marginal_pattern_prob(&u, &grid),
                bank.marginal_pattern_prob(&u.flipped_reversed(), &grid),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn score_and_jacobian_at_difficulty() {
        let bank = five_item_bank();
        let d = DEFAULT_SCALE;
        let xi1 = bank.score_xi(&pat(&[1, 1, 1, 1, 1]), 0.0);
        let xi0 = bank.score_xi(&pat(&[0, 0, 0, 0, 0]), 0.0);
        assert_abs_diff_eq!(xi1[2], -d / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(xi0[2], d / 2.0, epsilon = 1e-15);
        let sigma = bank.score_jacobian(0.0);
        assert_abs_diff_eq!(sigma[(2, 2)], -d * d / 4.0, epsilon = 1e-15);
        assert_eq!(sigma[(0, 1)], 0.0);
        assert!(sigma.diag().iter().all(|&s| s < 0.0));
    }

    #[test]
    fn pattern_validation() {
        assert_eq!(
            ResponsePattern::new(vec![0, 2]),
            Err(IrtError::NonBinaryResponse { index: 1, value: 2 })
        );
        let bank = five_item_bank();
        assert!(bank.check_pattern(&pat(&[1, 0])).is_err());
        assert!(ItemBank::<f64>::new(vec![]).is_err());
        assert!(ItemBank::new(vec![f64::NAN]).is_err());
        assert!(ItemBank::with_scale(vec![0.0], -1.0).is_err());
    }

    #[test]
    fn matrix_construction() {
        let m = ResponseMatrix::from_bits(vec![vec![1, 0], vec![0, 0], vec![1, 1]]).unwrap();
        assert_eq!((m.n_respondents(), m.n_items()), (3, 2));
        assert_eq!(m.row_ids()[2], "r3");
        assert_eq!(m.item_labels(), ["item1", "item2"]);
        assert!(ResponseMatrix::from_bits(vec![vec![1, 0], vec![1]]).is_err());
        assert_eq!(ResponseMatrix::new(vec![]), Err(IrtError::EmptyMatrix));
        assert!(ResponseMatrix::with_ids(vec![pat(&[1])], vec![]).is_err());
    }

    #[test]
    fn enumeration_is_lexicographic() {
        assert_eq!(
            ResponsePattern::from_index(0b10110, 5).bits(),
            [1, 0, 1, 1, 0]
        );
        let all: Vec<_> = (0..16).map(|i| ResponsePattern::from_index(i, 4)).collect();
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(
            pat(&[1, 1, 0, 0, 0]).flipped_reversed().bits(),
            [1, 1, 1, 0, 0]
        );
        assert_eq!(pat(&[0, 1]).to_string(), "(0, 1)");
    }

    fn bank_and_pattern() -> impl Strategy<Value = (Vec<f64>, Vec<u8>, f64)> {
        (1usize..=8).prop_flat_map(|j| {
            (
                prop::collection::vec(-3.0f64..3.0, j),
                prop::collection::vec(0u8..=1, j),
                -4.0f64..4.0,
            )
        })
    }

    proptest! {
        #[test]
        fn icc_is_monotone(b in -4.0f64..4.0, t1 in -5.0f64..5.0, dt in 0.01f64..2.0) {
            let bank = ItemBank::new(vec![b]).unwrap();
            prop_assert!(bank.icc(t1 + dt, 0) > bank.icc(t1, 0));
            let harder = ItemBank::new(vec![b + dt]).unwrap();
            prop_assert!(harder.icc(t1, 0) < bank.icc(t1, 0));
        }

        #[test]
        fn conditional_probabilities_normalize(
            b in prop::collection::vec(-3.0f64..3.0, 1..=10),
            theta in -4.0f64..4.0,
        ) {
            let bank = ItemBank::new(b).unwrap();
            let j = bank.len();
            let total: f64 = (0..1u64 << j)
                .map(|i| bank.pattern_prob_given_theta(&ResponsePattern::from_index(i, j), theta))
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn score_is_log_likelihood_gradient((b, bits, theta) in bank_and_pattern()) {
            let bank = ItemBank::new(b.clone()).unwrap();
            let u = ResponsePattern::new(bits).unwrap();
            let xi = bank.score_xi(&u, theta);
            let sigma = bank.score_jacobian_diag(theta);
            let h = 1e-5;
            for j in 0..b.len() {
                let shifted = |s: f64| {
                    let mut bb = b.clone();
                    bb[j] += s;
                    ItemBank::new(bb).unwrap()
                };
                let (up, down) = (shifted(h), shifted(-h));
                let fd = (up.log_pattern_prob_given_theta(&u, theta)
                    - down.log_pattern_prob_given_theta(&u, theta)) / (2.0 * h);
                prop_assert!((fd - xi[j]).abs() <= 1e-6 * xi[j].abs().max(1e-3));
                let fd2 = (up.score_xi(&u, theta)[j] - down.score_xi(&u, theta)[j]) / (2.0 * h);
                prop_assert!((fd2 - sigma[j]).abs() <= 1e-6 * sigma[j].abs().max(1e-3));
            }
        }
    }
}
