//! Probabilistic model of explicit user feedback actions.
//!
//! Given a satisfaction score S in 1..=10 for an assistant turn, the model
//! yields probabilities for the user to like, dislike, or do nothing, with an
//! optional copy side-action for long-output tasks. Sigmoid curves place like
//! mass on high scores and dislike mass on low scores; the scale constants
//! are calibrated analytically so that the *marginal* action rates over an
//! observed score distribution hit configured global targets (overall
//! feedback rate and the like share of it).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::TaskFormat;

/// Discrete 1..=10 satisfaction grade for one assistant turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SatisfactionScore(u8);

impl TryFrom<u8> for SatisfactionScore {
    type Error = CalibrationError;
    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<SatisfactionScore> for u8 {
    fn from(s: SatisfactionScore) -> u8 {
        s.0
    }
}

impl SatisfactionScore {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 10;

    pub fn new(value: u8) -> Result<Self, CalibrationError> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(CalibrationError::ScoreOutOfRange(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// All ten scores in ascending order.
    pub fn all() -> impl Iterator<Item = SatisfactionScore> {
        (Self::MIN..=Self::MAX).map(SatisfactionScore)
    }
}

impl std::fmt::Display for SatisfactionScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Probability mass over the ten scores, `mass[0]` being S=1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 10]", into = "[f64; 10]")]
pub struct ScoreDistribution {
    mass: [f64; 10],
}

const MASS_SUM_TOLERANCE: f64 = 1e-9;

impl ScoreDistribution {
    pub fn new(mass: [f64; 10]) -> Result<Self, CalibrationError> {
        if mass
            .iter()
            .any(|&p| !(0.0..=1.0).contains(&p) || !p.is_finite())
        {
            return Err(CalibrationError::InvalidMass);
        }
        let sum: f64 = mass.iter().sum();
        if (sum - 1.0).abs() > MASS_SUM_TOLERANCE {
            return Err(CalibrationError::MassNotNormalized { sum });
        }
        Ok(Self { mass })
    }

    pub fn probability(&self, score: SatisfactionScore) -> f64 {
        self.mass[(score.get() - 1) as usize]
    }

    /// Expectation of `f(S)` under this distribution.
    pub fn expect(&self, f: impl Fn(SatisfactionScore) -> f64) -> f64 {
        SatisfactionScore::all()
            .map(|s| self.probability(s) * f(s))
            .sum()
    }
}

impl TryFrom<[f64; 10]> for ScoreDistribution {
    type Error = CalibrationError;
    fn try_from(mass: [f64; 10]) -> Result<Self, Self::Error> {
        Self::new(mass)
    }
}

impl From<ScoreDistribution> for [f64; 10] {
    fn from(d: ScoreDistribution) -> Self {
        d.mass
    }
}

/// Marginal action rates the calibration must reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalTargets {
    /// Overall probability that a turn receives explicit feedback.
    pub feedback_rate: f64,
    /// Fraction of that feedback which is a like.
    pub like_share: f64,
}

impl GlobalTargets {
    pub fn new(feedback_rate: f64, like_share: f64) -> Result<Self, CalibrationError> {
        if !(0.0..=1.0).contains(&feedback_rate) || !(0.0..=1.0).contains(&like_share) {
            return Err(CalibrationError::InvalidTargets);
        }
        Ok(Self {
            feedback_rate,
            like_share,
        })
    }

    pub fn p_like(&self) -> f64 {
        self.feedback_rate * self.like_share
    }

    pub fn p_dislike(&self) -> f64 {
        self.feedback_rate * (1.0 - self.like_share)
    }
}

/// Shape parameters for the two sigmoid curves (steepness and midpoint).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidShape {
    pub k_like: f64,
    pub mid_like: f64,
    pub k_dislike: f64,
    pub mid_dislike: f64,
}

impl Default for SigmoidShape {
    fn default() -> Self {
        defaults::SIGMOID_SHAPE
    }
}

/// Calibrated per-score action model:
/// `P(like|S) = c_like * sigma(k_like * (S - mid_like))` and
/// `P(dislike|S) = c_dislike * sigma(-k_dislike * (S - mid_dislike))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidActionModel {
    pub shape: SigmoidShape,
    pub c_like: f64,
    pub c_dislike: f64,
}

/// Two-point model for tasks whose satisfaction is binary (mapped onto a
/// high and a low score): feedback probability is concentrated there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryActionModel {
    pub high: SatisfactionScore,
    pub low: SatisfactionScore,
    pub p_like_given_high: f64,
    pub p_dislike_given_low: f64,
}

/// Per-turn action probabilities. `p_copy` is an independent side-action;
/// the three primary probabilities sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionProbabilities {
    pub p_like: f64,
    pub p_dislike: f64,
    pub p_none: f64,
    pub p_copy: f64,
}

/// Explicit feedback on one assistant turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimaryAction {
    Like,
    Dislike,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAction {
    pub primary: PrimaryAction,
    pub copied: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("satisfaction score {0} outside 1..=10")]
    ScoreOutOfRange(u8),
    #[error("score mass must be finite and within [0, 1]")]
    InvalidMass,
    #[error("score mass sums to {sum}, not 1")]
    MassNotNormalized { sum: f64 },
    #[error("rates must lie within [0, 1]")]
    InvalidTargets,
    #[error("targets infeasible: required {side} scale {c:.6} exceeds 1")]
    InfeasibleCalibration { side: &'static str, c: f64 },
    #[error("expected sigmoid mass under the distribution is numerically zero")]
    DegenerateDistribution,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Solves the scale constants in closed form. The marginal like rate is
/// `c_like * E[sigma(k_like (S - mid_like))]`, linear in `c_like`, so the
/// calibrated scale is simply the target divided by that expectation; same
/// for dislike with the mirrored sigmoid.
pub fn calibrate_sigmoid(
    dist: &ScoreDistribution,
    targets: GlobalTargets,
    shape: SigmoidShape,
) -> Result<SigmoidActionModel, CalibrationError> {
    let like_mass = dist.expect(|s| sigmoid(shape.k_like * (f64::from(s.get()) - shape.mid_like)));
    let dislike_mass =
        dist.expect(|s| sigmoid(-shape.k_dislike * (f64::from(s.get()) - shape.mid_dislike)));
    let c_like = scale_for("like", targets.p_like(), like_mass)?;
    let c_dislike = scale_for("dislike", targets.p_dislike(), dislike_mass)?;
    Ok(SigmoidActionModel {
        shape,
        c_like,
        c_dislike,
    })
}

fn scale_for(side: &'static str, target: f64, mass: f64) -> Result<f64, CalibrationError> {
    if mass < DENOMINATOR_FLOOR {
        return Err(CalibrationError::DegenerateDistribution);
    }
    let c = target / mass;
    if c > 1.0 {
        return Err(CalibrationError::InfeasibleCalibration { side, c });
    }
    Ok(c)
}

/// Conditional action probabilities for a binary-satisfaction task:
/// `P(like|high) = P(like)/P(high)`, `P(dislike|low) = P(dislike)/P(low)`.
pub fn calibrate_binary(
    dist: &ScoreDistribution,
    targets: GlobalTargets,
    high: SatisfactionScore,
    low: SatisfactionScore,
) -> Result<BinaryActionModel, CalibrationError> {
    let p_high = dist.probability(high);
    let p_low = dist.probability(low);
    if p_high < DENOMINATOR_FLOOR || p_low < DENOMINATOR_FLOOR {
        return Err(CalibrationError::DegenerateDistribution);
    }
    let p_like_given_high = scale_for("like", targets.p_like(), p_high)?;
    let p_dislike_given_low = scale_for("dislike", targets.p_dislike(), p_low)?;
    Ok(BinaryActionModel {
        high,
        low,
        p_like_given_high,
        p_dislike_given_low,
    })
}

/// Copy rides along as an amplified like: long-output tasks copy at four
/// times the like probability (capped at 1); short outputs never copy.
const COPY_MULTIPLIER: f64 = 4.0;

fn copy_probability(p_like: f64, format: TaskFormat) -> f64 {
    if format.long_output() {
        (COPY_MULTIPLIER * p_like).min(1.0)
    } else {
        0.0
    }
}

impl SigmoidActionModel {
    pub fn probabilities(
        &self,
        score: SatisfactionScore,
        format: TaskFormat,
    ) -> ActionProbabilities {
        let s = f64::from(score.get());
        let p_like = self.c_like * sigmoid(self.shape.k_like * (s - self.shape.mid_like));
        let p_dislike =
            self.c_dislike * sigmoid(-self.shape.k_dislike * (s - self.shape.mid_dislike));
        ActionProbabilities {
            p_like,
            p_dislike,
            p_none: 1.0 - p_like - p_dislike,
            p_copy: copy_probability(p_like, format),
        }
    }
}

impl BinaryActionModel {
    pub fn probabilities(
        &self,
        score: SatisfactionScore,
        format: TaskFormat,
    ) -> ActionProbabilities {
        let (p_like, p_dislike) = if score == self.high {
            (self.p_like_given_high, 0.0)
        } else if score == self.low {
            (0.0, self.p_dislike_given_low)
        } else {
            (0.0, 0.0)
        };
        ActionProbabilities {
            p_like,
            p_dislike,
            p_none: 1.0 - p_like - p_dislike,
            p_copy: copy_probability(p_like, format),
        }
    }
}

/// Samples one action. Draw order is fixed (primary first, then copy) so a
/// seeded RNG reproduces the same action stream.
pub fn sample_action<R: Rng + ?Sized>(probs: &ActionProbabilities, rng: &mut R) -> UserAction {
    let u: f64 = rng.gen();
    let primary = if u < probs.p_like {
        PrimaryAction::Like
    } else if u < probs.p_like + probs.p_dislike {
        PrimaryAction::Dislike
    } else {
        PrimaryAction::None
    };
    let copied = rng.gen::<f64>() < probs.p_copy;
    UserAction { primary, copied }
}

/// Maps a continuous 0..=1 overlap metric (e.g. token F1) onto the ten-point
/// scale in 0.1-wide bands: F1 >= 0.9 is a 10, each 0.1 below drops one
/// grade, anything under 0.1 is a 1.
pub fn f1_to_satisfaction(f1: f64) -> SatisfactionScore {
    let clamped = f1.clamp(0.0, 1.0);
    let grade = (clamped * 10.0).floor() as u8 + 1;
    SatisfactionScore(grade.min(SatisfactionScore::MAX))
}

/// Binary tasks grade 9 when correct, 3 when wrong.
pub fn binary_satisfaction(correct: bool) -> SatisfactionScore {
    if correct {
        SatisfactionScore(9)
    } else {
        SatisfactionScore(3)
    }
}

/// Default operating point: observed score distribution of judge-graded
/// assistant turns plus the global action rates the curves are tuned to.
pub mod defaults {
    use super::{GlobalTargets, ScoreDistribution, SigmoidShape};

    /// Empirical share of each satisfaction grade (S=1 first) among
    /// judge-scored assistant turns; the mass the calibration averages over.
    pub const SCORE_MASS: [f64; 10] = [
        0.0002, 0.0093, 0.0306, 0.0193, 0.0040, 0.0256, 0.1750, 0.3212, 0.4105, 0.0043,
    ];

    pub const FEEDBACK_RATE: f64 = 0.065;
    pub const LIKE_SHARE: f64 = 0.86;

    pub const SIGMOID_SHAPE: SigmoidShape = SigmoidShape {
        k_like: 1.5,
        mid_like: 7.5,
        k_dislike: 1.5,
        mid_dislike: 4.5,
    };

    pub fn score_distribution() -> ScoreDistribution {
        ScoreDistribution::new(SCORE_MASS).expect("default mass is normalized")
    }

    pub fn targets() -> GlobalTargets {
        GlobalTargets::new(FEEDBACK_RATE, LIKE_SHARE).expect("default rates are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_model() -> SigmoidActionModel {
        calibrate_sigmoid(
            &defaults::score_distribution(),
            defaults::targets(),
            SigmoidShape::default(),
        )
        .unwrap()
    }

    #[test]
    fn global_targets_split_feedback_rate() {
        let t = defaults::targets();
        assert!((t.p_like() - 0.0559).abs() < 1e-12);
        assert!((t.p_dislike() - 0.0091).abs() < 1e-12);
    }

    #[test]
    fn calibrated_scales_match_closed_form() {
        let m = default_model();
        assert!(
            (m.c_like - 0.0856668220).abs() < 1e-9,
            "c_like = {}",
            m.c_like
        );
        assert!(
            (m.c_dislike - 0.1517200104).abs() < 1e-9,
            "c_dislike = {}",
            m.c_dislike
        );
    }

    /// Brute-force check of the closed form: scan the scale over [0, 1] in
    /// 1e-6 steps minimizing the marginal-rate error and compare.
    #[test]
    fn grid_search_agrees_with_analytic_scales() {
        let dist = defaults::score_distribution();
        let targets = defaults::targets();
        let shape = SigmoidShape::default();
        let m = default_model();

        let like_mass =
            dist.expect(|s| sigmoid(shape.k_like * (f64::from(s.get()) - shape.mid_like)));
        let dislike_mass =
            dist.expect(|s| sigmoid(-shape.k_dislike * (f64::from(s.get()) - shape.mid_dislike)));
        for (mass, target, analytic) in [
            (like_mass, targets.p_like(), m.c_like),
            (dislike_mass, targets.p_dislike(), m.c_dislike),
        ] {
            let mut best = (f64::INFINITY, 0.0);
            let mut c = 0.0;
            while c <= 1.0 {
                let err = (c * mass - target).abs();
                if err < best.0 {
                    best = (err, c);
                }
                c += 1e-6;
            }
            assert!(
                (best.1 - analytic).abs() < 2e-6,
                "grid {} vs analytic {}",
                best.1,
                analytic
            );
        }
    }

    #[test]
    fn marginal_rates_recover_targets() {
        let dist = defaults::score_distribution();
        let m = default_model();
        let like = dist.expect(|s| m.probabilities(s, TaskFormat::SiSo).p_like);
        let dislike = dist.expect(|s| m.probabilities(s, TaskFormat::SiSo).p_dislike);
        assert!((like - 0.0559).abs() < 1e-12);
        assert!((dislike - 0.0091).abs() < 1e-12);
    }

    /// Frozen conditional-probability grid (percent, rounded to 3 decimals)
    /// for the default operating point.
    const EXPECTED_GRID: [(f64, f64); 10] = [
        (0.000, 15.091),
        (0.002, 14.821),
        (0.010, 13.723),
        (0.045, 10.303),
        (0.197, 4.867),
        (0.817, 1.446),
        (2.748, 0.349),
        (5.818, 0.079),
        (7.749, 0.018),
        (8.369, 0.004),
    ];

    #[test]
    fn conditional_grid_matches_frozen_values() {
        let m = default_model();
        for (i, s) in SatisfactionScore::all().enumerate() {
            let p = m.probabilities(s, TaskFormat::SiSo);
            let (like_pct, dislike_pct) = EXPECTED_GRID[i];
            assert!(
                (p.p_like - like_pct / 100.0).abs() < 1e-3,
                "S={s} like {} vs {}",
                p.p_like,
                like_pct
            );
            assert!(
                (p.p_dislike - dislike_pct / 100.0).abs() < 1e-3,
                "S={s} dislike {} vs {}",
                p.p_dislike,
                dislike_pct
            );
            assert!((p.p_like + p.p_dislike + p.p_none - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn copy_only_on_long_output_formats() {
        let m = default_model();
        let s8 = SatisfactionScore::new(8).unwrap();
        let long = m.probabilities(s8, TaskFormat::LiLo);
        assert!((long.p_copy - 4.0 * long.p_like).abs() < 1e-12);
        assert!((long.p_copy - 0.23272).abs() < 1e-3);
        for short in [TaskFormat::LiSo, TaskFormat::SiSo] {
            assert_eq!(m.probabilities(s8, short).p_copy, 0.0);
        }
        // cap at 1: a synthetic model with huge like probability
        let saturated = SigmoidActionModel {
            shape: SigmoidShape::default(),
            c_like: 1.0,
            c_dislike: 0.0,
        };
        let p = saturated.probabilities(SatisfactionScore::new(10).unwrap(), TaskFormat::SiLo);
        assert_eq!(p.p_copy, 1.0);
    }

    #[test]
    fn binary_calibration_reproduces_reference_rates() {
        // Binary-path score mass concentrated on the two anchor grades.
        let mut mass = [0.0; 10];
        mass[8] = 0.5646; // S=9
        mass[2] = 0.4333; // S=3
        mass[4] = 1.0 - 0.5646 - 0.4333;
        let dist = ScoreDistribution::new(mass).unwrap();
        let m = calibrate_binary(
            &dist,
            defaults::targets(),
            SatisfactionScore::new(9).unwrap(),
            SatisfactionScore::new(3).unwrap(),
        )
        .unwrap();
        assert!(
            (m.p_like_given_high - 0.099).abs() < 5e-4,
            "{}",
            m.p_like_given_high
        );
        assert!(
            (m.p_dislike_given_low - 0.021).abs() < 5e-4,
            "{}",
            m.p_dislike_given_low
        );

        let p9 = m.probabilities(SatisfactionScore::new(9).unwrap(), TaskFormat::LiSo);
        assert_eq!(p9.p_dislike, 0.0);
        let p3 = m.probabilities(SatisfactionScore::new(3).unwrap(), TaskFormat::LiSo);
        assert_eq!(p3.p_like, 0.0);
        let p5 = m.probabilities(SatisfactionScore::new(5).unwrap(), TaskFormat::LiSo);
        assert_eq!((p5.p_like, p5.p_dislike), (0.0, 0.0));
        assert_eq!(p5.p_none, 1.0);
    }

    #[test]
    fn infeasible_targets_are_rejected() {
        // All mass on S=1 makes the like curve nearly dead: hitting a 5.59%
        // like rate would need a scale far above 1.
        let mut mass = [0.0; 10];
        mass[0] = 1.0;
        let dist = ScoreDistribution::new(mass).unwrap();
        let err = calibrate_sigmoid(&dist, defaults::targets(), SigmoidShape::default());
        assert!(matches!(
            err,
            Err(CalibrationError::InfeasibleCalibration { side: "like", .. })
        ));
    }

    #[test]
    fn denormalized_mass_is_rejected() {
        let mut mass = defaults::SCORE_MASS;
        mass[0] += 0.01;
        assert!(matches!(
            ScoreDistribution::new(mass),
            Err(CalibrationError::MassNotNormalized { .. })
        ));
    }

    #[test]
    fn f1_mapping_hits_every_band_edge() {
        let cases = [
            (0.95, 10),
            (0.9, 10),
            (0.85, 9),
            (0.8, 9),
            (0.7, 8),
            (0.6, 7),
            (0.5, 6),
            (0.4, 5),
            (0.3, 4),
            (0.2, 3),
            (0.1, 2),
            (0.05, 1),
            (0.0, 1),
            (1.0, 10),
        ];
        for (f1, want) in cases {
            assert_eq!(f1_to_satisfaction(f1).get(), want, "f1 = {f1}");
        }
    }

    #[test]
    fn f1_mapping_is_monotone_on_a_fine_grid() {
        let mut prev = 0;
        let mut f1 = 0.0;
        while f1 <= 1.0 + 1e-9 {
            let grade = f1_to_satisfaction(f1).get();
            assert!(grade >= prev, "grade dropped at f1 = {f1}");
            prev = grade;
            f1 += 0.001;
        }
    }

    #[test]
    fn binary_satisfaction_maps_to_anchor_grades() {
        assert_eq!(binary_satisfaction(true).get(), 9);
        assert_eq!(binary_satisfaction(false).get(), 3);
    }

    #[test]
    fn sampling_is_deterministic_under_a_seed() {
        let m = default_model();
        let probs = m.probabilities(SatisfactionScore::new(8).unwrap(), TaskFormat::LiLo);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_action(&probs, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn sampled_frequencies_track_probabilities() {
        let m = default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        for s in SatisfactionScore::all() {
            let probs = m.probabilities(s, TaskFormat::LiLo);
            let mut likes = 0u32;
            let mut dislikes = 0u32;
            let mut copies = 0u32;
            for _ in 0..n {
                let a = sample_action(&probs, &mut rng);
                match a.primary {
                    PrimaryAction::Like => likes += 1,
                    PrimaryAction::Dislike => dislikes += 1,
                    PrimaryAction::None => {}
                }
                copies += u32::from(a.copied);
            }
            let nf = f64::from(n);
            for (count, p) in [
                (likes, probs.p_like),
                (dislikes, probs.p_dislike),
                (copies, probs.p_copy),
            ] {
                let sigma = (p * (1.0 - p) / nf).sqrt();
                let diff = (f64::from(count) / nf - p).abs();
                assert!(
                    diff <= 4.0 * sigma + 1e-9,
                    "S={s}: freq off by {diff}, sigma {sigma}"
                );
            }
        }
    }
}
