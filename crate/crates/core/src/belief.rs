//! Finite belief-state calculus.
//!
//! A belief is a probability vector over `K` hypotheses about the latent
//! answer. Evidence arrives through an [`ObservationChannel`], a row-stochastic
//! `K x L` likelihood table, and is folded in with Bayes' rule:
//!
//!   b'(y) = P(o | y) b(y) / sum_y' P(o | y') b(y')
//!
//! Information gain is measured as the drop of an [`UncertaintyFunctional`]
//! between consecutive beliefs. All logs are natural (nats).

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for every stochasticity check in this module.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("observation {obs} is impossible under the current belief")]
    ImpossibleObservation { obs: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range (size {size})")]
    OutOfRange { index: usize, size: usize },
}

pub type Result<T> = std::result::Result<T, BeliefError>;

fn check_stochastic(row: &[f64], what: &str) -> Result<()> {
    if row.is_empty() {
        return Err(BeliefError::InvalidDistribution(format!("{what} is empty")));
    }
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(BeliefError::InvalidDistribution(format!(
            "{what} has invalid entry {v}"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(BeliefError::InvalidDistribution(format!(
            "{what} sums to {sum}"
        )));
    }
    Ok(())
}

/// Normalized probability distribution over a finite hypothesis set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BeliefState(Vec<f64>);

impl BeliefState {
    /// Wraps an already-normalized vector, validating it.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_stochastic(&probs, "belief")?;
        Ok(Self(probs))
    }

    /// Uniform belief over `k` hypotheses.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(BeliefError::InvalidDistribution("K must be >= 1".into()));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    /// Point mass on hypothesis `y`.
    pub fn degenerate(k: usize, y: usize) -> Result<Self> {
        if y >= k {
            return Err(BeliefError::OutOfRange { index: y, size: k });
        }
        let mut probs = vec![0.0; k];
        probs[y] = 1.0;
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.0.iter().filter(|p| **p > 0.0).count() == 1
    }

    /// Index of the most probable hypothesis; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Convex combination `weight * self + (1 - weight) * other`.
    pub fn mix(&self, other: &BeliefState, weight: f64) -> Result<BeliefState> {
        if self.len() != other.len() {
            return Err(BeliefError::DimensionMismatch(format!(
                "mixing beliefs of size {} and {}",
                self.len(),
                other.len()
            )));
        }
        let probs: Vec<f64> = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| weight * a + (1.0 - weight) * b)
            .collect();
        normalize_belief(&probs)
    }
}

impl TryFrom<Vec<f64>> for BeliefState {
    type Error = BeliefError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        BeliefState::new(v)
    }
}

impl From<BeliefState> for Vec<f64> {
    fn from(b: BeliefState) -> Self {
        b.0
    }
}

/// Divides non-negative weights by their sum.
pub fn normalize_belief(weights: &[f64]) -> Result<BeliefState> {
    if weights.is_empty() {
        return Err(BeliefError::InvalidDistribution("no weights".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(BeliefError::InvalidDistribution(format!(
            "negative or non-finite weight {w}"
        )));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(BeliefError::InvalidDistribution("all weights are zero".into()));
    }
    Ok(BeliefState(weights.iter().map(|w| w / sum).collect()))
}

/// Likelihood table `P(o | Y = y, a)` for one information-gathering action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationChannel {
    likelihoods: Vec<Vec<f64>>,
    action_label: String,
}

impl ObservationChannel {
    pub fn new(likelihoods: Vec<Vec<f64>>, action_label: impl Into<String>) -> Result<Self> {
        if likelihoods.is_empty() {
            return Err(BeliefError::InvalidDistribution("channel has no rows".into()));
        }
        let l = likelihoods[0].len();
        for (y, row) in likelihoods.iter().enumerate() {
            if row.len() != l {
                return Err(BeliefError::DimensionMismatch(format!(
                    "channel row {y} has {} symbols, expected {l}",
                    row.len()
                )));
            }
            check_stochastic(row, &format!("channel row {y}"))?;
        }
        Ok(Self {
            likelihoods,
            action_label: action_label.into(),
        })
    }

    /// Noiseless channel: observation `y` is emitted iff the hypothesis is `y`.
    pub fn identity(k: usize, action_label: impl Into<String>) -> Result<Self> {
        let rows = (0..k)
            .map(|y| (0..k).map(|o| if o == y { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(rows, action_label)
    }

    /// K-ary symmetric channel: the true symbol with probability `1 - flip`,
    /// otherwise one of the remaining symbols uniformly.
    pub fn symmetric(k: usize, flip: f64, action_label: impl Into<String>) -> Result<Self> {
        if k < 2 {
            return Self::identity(k, action_label);
        }
        let off = flip / (k - 1) as f64;
        let rows = (0..k)
            .map(|y| (0..k).map(|o| if o == y { 1.0 - flip } else { off }).collect())
            .collect();
        Self::new(rows, action_label)
    }

    /// Every row equal: the observation carries no information about `Y`.
    pub fn uninformative(k: usize, l: usize, action_label: impl Into<String>) -> Result<Self> {
        Self::new(vec![vec![1.0 / l as f64; l]; k], action_label)
    }

    pub fn num_hypotheses(&self) -> usize {
        self.likelihoods.len()
    }

    pub fn num_observations(&self) -> usize {
        self.likelihoods[0].len()
    }

    pub fn likelihood(&self, y: usize, obs: usize) -> f64 {
        self.likelihoods[y][obs]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.likelihoods
    }

    pub fn action_label(&self) -> &str {
        &self.action_label
    }

    /// Marginal `P(o | b) = sum_y b(y) P(o | y)` for every symbol.
    pub fn predictive(&self, b: &BeliefState) -> Result<Vec<f64>> {
        self.check_belief(b)?;
        let mut out = vec![0.0; self.num_observations()];
        for (row, by) in self.likelihoods.iter().zip(b.probs()) {
            for (acc, p) in out.iter_mut().zip(row) {
                *acc += by * p;
            }
        }
        Ok(out)
    }

    /// Draws an observation from the row of hypothesis `y`.
    pub fn sample<R: Rng + ?Sized>(&self, y: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.likelihoods[y];
        let mut acc = 0.0;
        for (o, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return o;
            }
        }
        // u landed in the rounding gap above the last cumulative sum
        row.iter().rposition(|p| *p > 0.0).unwrap_or(row.len() - 1)
    }

    fn check_belief(&self, b: &BeliefState) -> Result<()> {
        if b.len() != self.num_hypotheses() {
            return Err(BeliefError::DimensionMismatch(format!(
                "belief has {} hypotheses, channel has {}",
                b.len(),
                self.num_hypotheses()
            )));
        }
        Ok(())
    }
}

/// Row-stochastic post-processing kernel `P(O2 | O1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarblingKernel {
    kernel: Vec<Vec<f64>>,
}

impl GarblingKernel {
    pub fn new(kernel: Vec<Vec<f64>>) -> Result<Self> {
        if kernel.is_empty() {
            return Err(BeliefError::InvalidDistribution("kernel has no rows".into()));
        }
        let width = kernel[0].len();
        for (i, row) in kernel.iter().enumerate() {
            if row.len() != width {
                return Err(BeliefError::DimensionMismatch(format!(
                    "kernel row {i} has {} columns, expected {width}",
                    row.len()
                )));
            }
            check_stochastic(row, &format!("kernel row {i}"))?;
        }
        Ok(Self { kernel })
    }

    pub fn identity(l: usize) -> Result<Self> {
        Self::new(
            (0..l)
                .map(|i| (0..l).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.kernel
    }
}

/// Uncertainty measures over beliefs. Only Shannon entropy ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyFunctional {
    #[default]
    Shannon,
}

impl UncertaintyFunctional {
    pub fn evaluate(&self, b: &BeliefState) -> f64 {
        match self {
            UncertaintyFunctional::Shannon => shannon_uncertainty(b),
        }
    }
}

/// `-sum b ln b` with `0 ln 0 = 0`.
pub fn shannon_uncertainty(b: &BeliefState) -> f64 {
    entropy_nats(b.probs())
}

/// Shannon entropy of a probability vector, in nats. Zero entries contribute
/// nothing. Tiny negative results from rounding are clamped to zero.
pub fn entropy_nats(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|x| **x > 0.0)
        .map(|x| -x * x.ln())
        .sum();
    h.max(0.0)
}

pub fn bayes_update(b: &BeliefState, ch: &ObservationChannel, obs: usize) -> Result<BeliefState> {
    ch.check_belief(b)?;
    if obs >= ch.num_observations() {
        return Err(BeliefError::OutOfRange {
            index: obs,
            size: ch.num_observations(),
        });
    }
    let joint: Vec<f64> = b
        .probs()
        .iter()
        .enumerate()
        .map(|(y, by)| by * ch.likelihood(y, obs))
        .collect();
    let evidence: f64 = joint.iter().sum();
    if evidence <= 0.0 {
        return Err(BeliefError::ImpossibleObservation { obs });
    }
    Ok(BeliefState(joint.into_iter().map(|j| j / evidence).collect()))
}

/// `U(before) - U(after)`; negative when the observation was misleading.
pub fn realized_ig(
    before: &BeliefState,
    after: &BeliefState,
    u: UncertaintyFunctional,
) -> Result<f64> {
    if before.len() != after.len() {
        return Err(BeliefError::DimensionMismatch(format!(
            "beliefs of size {} and {}",
            before.len(),
            after.len()
        )));
    }
    Ok(u.evaluate(before) - u.evaluate(after))
}

/// Observation-averaged information gain of querying `ch` from belief `b`.
/// Under Shannon uncertainty this is the mutual information `I(Y; O)`.
pub fn expected_ig(
    b: &BeliefState,
    ch: &ObservationChannel,
    u: UncertaintyFunctional,
) -> Result<f64> {
    let predictive = ch.predictive(b)?;
    let prior_u = u.evaluate(b);
    let mut eig = 0.0;
    for (obs, p_obs) in predictive.iter().enumerate() {
        if *p_obs <= 0.0 {
            continue;
        }
        let post = bayes_update(b, ch, obs)?;
        eig += p_obs * (prior_u - u.evaluate(&post));
    }
    Ok(eig)
}

/// Post-processes the channel's observations through `g` (matrix product).
pub fn garble_channel(ch: &ObservationChannel, g: &GarblingKernel) -> Result<ObservationChannel> {
    if g.rows().len() != ch.num_observations() {
        return Err(BeliefError::DimensionMismatch(format!(
            "kernel has {} rows, channel emits {} symbols",
            g.rows().len(),
            ch.num_observations()
        )));
    }
    let out_width = g.rows()[0].len();
    let rows = ch
        .rows()
        .iter()
        .map(|row| {
            (0..out_width)
                .map(|j| row.iter().zip(g.rows()).map(|(p, k)| p * k[j]).sum())
                .collect()
        })
        .collect();
    ObservationChannel::new(rows, format!("{}/garbled", ch.action_label()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefTrajectory {
    pub beliefs: Vec<BeliefState>,
    pub observations: Vec<usize>,
    pub igs: Vec<f64>,
    /// Discount factor of the underlying decision process. Carried as
    /// metadata; no information-gain quantity depends on it.
    pub discount: f64,
}

impl BeliefTrajectory {
    pub fn total_ig(&self) -> f64 {
        self.igs.iter().sum()
    }

    pub fn initial(&self) -> &BeliefState {
        &self.beliefs[0]
    }

    pub fn last(&self) -> &BeliefState {
        self.beliefs.last().expect("trajectory always holds b_0")
    }
}

/// Rolls a belief forward through `channels`, sampling each observation from
/// the row of `true_y`.
pub fn simulate_belief_trajectory(
    b0: &BeliefState,
    channels: &[ObservationChannel],
    true_y: usize,
    u: UncertaintyFunctional,
    seed: u64,
) -> Result<BeliefTrajectory> {
    if true_y >= b0.len() {
        return Err(BeliefError::OutOfRange {
            index: true_y,
            size: b0.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beliefs = vec![b0.clone()];
    let mut observations = Vec::with_capacity(channels.len());
    let mut igs = Vec::with_capacity(channels.len());
    for ch in channels {
        let current = beliefs.last().expect("non-empty");
        let obs = ch.sample(true_y, &mut rng);
        let next = bayes_update(current, ch, obs)?;
        igs.push(realized_ig(current, &next, u)?);
        observations.push(obs);
        beliefs.push(next);
    }
    Ok(BeliefTrajectory {
        beliefs,
        observations,
        igs,
        discount: 1.0,
    })
}

/// Random instance generators shared by the property suites.
pub mod random {
    use super::*;

    /// Random belief over `k` hypotheses. Roughly one draw in four zeroes out
    /// a random subset of coordinates to exercise the boundary of the simplex.
    pub fn belief<R: Rng + ?Sized>(k: usize, rng: &mut R) -> BeliefState {
        let mut w: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        if k > 1 && rng.random_bool(0.25) {
            let keep = rng.random_range(0..k);
            for (i, x) in w.iter_mut().enumerate() {
                if i != keep && rng.random_bool(0.5) {
                    *x = 0.0;
                }
            }
        }
        normalize_belief(&w).expect("at least one positive weight")
    }

    pub fn stochastic_row<R: Rng + ?Sized>(l: usize, rng: &mut R) -> Vec<f64> {
        let mut w: Vec<f64> = (0..l).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        if l > 1 && rng.random_bool(0.2) {
            let kill = rng.random_range(0..l);
            w[kill] = 0.0;
        }
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    }

    pub fn channel<R: Rng + ?Sized>(k: usize, l: usize, rng: &mut R) -> ObservationChannel {
        let rows = (0..k).map(|_| stochastic_row(l, rng)).collect();
        ObservationChannel::new(rows, "random").expect("rows are stochastic")
    }

    pub fn kernel<R: Rng + ?Sized>(l_in: usize, l_out: usize, rng: &mut R) -> GarblingKernel {
        GarblingKernel::new((0..l_in).map(|_| stochastic_row(l_out, rng)).collect())
            .expect("rows are stochastic")
    }

    /// Hypothesis and symbol counts in `1..=max` (at least 2 symbols).
    pub fn dims<R: Rng + ?Sized>(max: usize, rng: &mut R) -> (usize, usize) {
        let k = Uniform::new_inclusive(1, max).expect("max >= 1").sample(rng);
        let l = Uniform::new_inclusive(2, max.max(2)).expect("max >= 2").sample(rng);
        (k, l)
    }
}

/// Largest violation of each uncertainty axiom observed over random draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub functional: UncertaintyFunctional,
    pub trials: usize,
    pub minimality: f64,
    pub concavity: f64,
    pub expected_monotonicity: f64,
}

impl AxiomReport {
    pub fn max_violation(&self) -> f64 {
        self.minimality
            .max(self.concavity)
            .max(self.expected_monotonicity)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

/// Samples beliefs, mixtures and channels and records the worst violation of
/// minimality, concavity and expected monotonicity.
pub fn check_axioms(u: UncertaintyFunctional, trials: usize, seed: u64) -> AxiomReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AxiomReport {
        functional: u,
        trials,
        minimality: 0.0,
        concavity: 0.0,
        expected_monotonicity: 0.0,
    };
    for _ in 0..trials.max(1) {
        let (k, l) = random::dims(6, &mut rng);

        let y = rng.random_range(0..k);
        let point = BeliefState::degenerate(k, y).expect("y < k");
        report.minimality = report.minimality.max(u.evaluate(&point).abs());

        let b1 = random::belief(k, &mut rng);
        let b2 = random::belief(k, &mut rng);
        let w: f64 = rng.random();
        let mixed = b1.mix(&b2, w).expect("same size");
        let chord = w * u.evaluate(&b1) + (1.0 - w) * u.evaluate(&b2);
        report.concavity = report.concavity.max(chord - u.evaluate(&mixed));

        let ch = random::channel(k, l, &mut rng);
        let eig = expected_ig(&b1, &ch, u).expect("dimensions agree");
        report.expected_monotonicity = report.expected_monotonicity.max(-eig);
    }
    report
}

/// Worst-case residuals of the three information-gain propositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub trials: usize,
    pub horizon: usize,
    /// Most negative expected information gain seen (0 if none negative).
    pub min_eig: f64,
    /// Largest expected information gain over channels with identical rows.
    pub max_eig_uninformative: f64,
    /// Largest `|sum IG_t - (U(b_0) - U(b_T))|`.
    pub telescoping_error: f64,
    /// Largest `EIG(garbled) - EIG(original)`.
    pub garbling_excess: f64,
}

impl PropositionReport {
    pub fn non_negativity_holds(&self, tol: f64) -> bool {
        self.min_eig >= -tol && self.max_eig_uninformative <= tol
    }

    pub fn telescoping_holds(&self, tol: f64) -> bool {
        self.telescoping_error <= tol
    }

    pub fn monotonicity_holds(&self, tol: f64) -> bool {
        self.garbling_excess <= tol
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.non_negativity_holds(tol) && self.telescoping_holds(tol) && self.monotonicity_holds(tol)
    }
}

/// Runs non-negativity, telescoping and garbling-monotonicity checks on
/// `trials` random instances with at most `max_dim` hypotheses and symbols.
pub fn check_propositions(
    u: UncertaintyFunctional,
    trials: usize,
    horizon: usize,
    max_dim: usize,
    seed: u64,
) -> Result<PropositionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PropositionReport {
        trials,
        horizon,
        min_eig: 0.0,
        max_eig_uninformative: 0.0,
        telescoping_error: 0.0,
        garbling_excess: 0.0,
    };
    for _ in 0..trials {
        let (k, l) = random::dims(max_dim, &mut rng);
        let b = random::belief(k, &mut rng);
        let ch = random::channel(k, l, &mut rng);

        let eig = expected_ig(&b, &ch, u)?;
        report.min_eig = report.min_eig.min(eig);

        let row = random::stochastic_row(l, &mut rng);
        let flat = ObservationChannel::new(vec![row; k], "flat")?;
        report.max_eig_uninformative = report.max_eig_uninformative.max(expected_ig(&b, &flat, u)?);

        let l_out = rng.random_range(1..=max_dim.max(1));
        let g = random::kernel(l, l_out, &mut rng);
        let garbled = garble_channel(&ch, &g)?;
        let excess = expected_ig(&b, &garbled, u)? - eig;
        report.garbling_excess = report.garbling_excess.max(excess);

        // the true hypothesis must be in the support or sampling can hit a
        // zero-evidence observation
        let support: Vec<usize> = (0..k).filter(|y| b.probs()[*y] > 0.0).collect();
        let true_y = support[rng.random_range(0..support.len())];
        let channels: Vec<_> = (0..horizon)
            .map(|_| random::channel(k, l, &mut rng))
            .collect();
        let traj = simulate_belief_trajectory(&b, &channels, true_y, u, rng.random())?;
        let direct = u.evaluate(traj.initial()) - u.evaluate(traj.last());
        report.telescoping_error = report.telescoping_error.max((traj.total_ig() - direct).abs());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ch(rows: Vec<Vec<f64>>) -> ObservationChannel {
        ObservationChannel::new(rows, "a").unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_belief(&[2.0, 2.0]).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(normalize_belief(&[1.0, 0.0, 0.0]).unwrap().probs(), &[1.0, 0.0, 0.0]);
        assert!(matches!(
            normalize_belief(&[0.0, 0.0]),
            Err(BeliefError::InvalidDistribution(_))
        ));
        assert!(normalize_belief(&[1.0, -0.5]).is_err());
        assert!(normalize_belief(&[]).is_err());
    }

    #[test]
    fn belief_rejects_unnormalized() {
        assert!(BeliefState::new(vec![0.5, 0.6]).is_err());
        assert!(BeliefState::new(vec![]).is_err());
        assert!(BeliefState::new(vec![1.0 + 5e-10, 0.0]).is_ok());
    }

    #[test]
    fn bayes_noiseless() {
        let b = BeliefState::uniform(2).unwrap();
        let post = bayes_update(&b, &ch(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), 0).unwrap();
        assert_eq!(post.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn bayes_degenerate_fixed_point() {
        let b = BeliefState::degenerate(2, 0).unwrap();
        let post = bayes_update(&b, &ch(vec![vec![0.3, 0.7], vec![0.6, 0.4]]), 1).unwrap();
        assert_eq!(post.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn bayes_noisy_hand_value() {
        let b = BeliefState::uniform(2).unwrap();
        let post = bayes_update(&b, &ch(vec![vec![0.9, 0.1], vec![0.1, 0.9]]), 0).unwrap();
        // 0.45 / (0.45 + 0.05)
        assert_abs_diff_eq!(post.probs()[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(post.probs()[1], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn bayes_impossible_observation() {
        let b = BeliefState::degenerate(2, 0).unwrap();
        let err = bayes_update(&b, &ch(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), 1).unwrap_err();
        assert_eq!(err, BeliefError::ImpossibleObservation { obs: 1 });
    }

    #[test]
    fn bayes_bad_dims() {
        let b = BeliefState::uniform(3).unwrap();
        let c = ch(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(bayes_update(&b, &c, 0), Err(BeliefError::DimensionMismatch(_))));
        let b2 = BeliefState::uniform(2).unwrap();
        assert!(matches!(bayes_update(&b2, &c, 5), Err(BeliefError::OutOfRange { .. })));
    }

    #[test]
    fn shannon_examples() {
        assert_eq!(shannon_uncertainty(&BeliefState::degenerate(2, 0).unwrap()), 0.0);
        assert_abs_diff_eq!(
            shannon_uncertainty(&BeliefState::uniform(2).unwrap()),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        let h = shannon_uncertainty(&BeliefState::new(vec![0.9, 0.1]).unwrap());
        // -0.9 ln 0.9 - 0.1 ln 0.1
        assert_abs_diff_eq!(h, 0.325_082_973_391_448_2, epsilon = 1e-12);
    }

    #[test]
    fn realized_ig_examples() {
        let u = UncertaintyFunctional::Shannon;
        let half = BeliefState::uniform(2).unwrap();
        let sure = BeliefState::degenerate(2, 0).unwrap();
        assert_abs_diff_eq!(realized_ig(&half, &sure, u).unwrap(), std::f64::consts::LN_2);
        assert_eq!(realized_ig(&half, &half, u).unwrap(), 0.0);
        let skew = BeliefState::new(vec![0.9, 0.1]).unwrap();
        let neg = realized_ig(&skew, &half, u).unwrap();
        assert_abs_diff_eq!(neg, 0.325_082_973_391_448_2 - std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(neg < -0.368 && neg > -0.369);
    }

    #[test]
    fn expected_ig_examples() {
        let u = UncertaintyFunctional::Shannon;
        let half = BeliefState::uniform(2).unwrap();
        let perfect = ObservationChannel::identity(2, "perfect").unwrap();
        assert_abs_diff_eq!(expected_ig(&half, &perfect, u).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);

        let flat = ch(vec![vec![0.3, 0.7], vec![0.3, 0.7]]);
        assert_abs_diff_eq!(expected_ig(&half, &flat, u).unwrap(), 0.0, epsilon = 1e-15);

        // Both observations have probability 1/2 and leave belief (0.9, 0.1) up
        // to relabeling, so EIG = ln 2 - H_b(0.1).
        let bsc = ObservationChannel::symmetric(2, 0.1, "bsc").unwrap();
        let eig = expected_ig(&half, &bsc, u).unwrap();
        assert_abs_diff_eq!(eig, std::f64::consts::LN_2 - 0.325_082_973_391_448_2, epsilon = 1e-12);
    }

    #[test]
    fn expected_ig_skips_impossible_symbols() {
        let u = UncertaintyFunctional::Shannon;
        let b = BeliefState::new(vec![1.0, 0.0]).unwrap();
        let c = ch(vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(expected_ig(&b, &c, u).unwrap(), 0.0);
    }

    #[test]
    fn garbling_examples() {
        let c = ch(vec![vec![0.7, 0.3], vec![0.2, 0.8]]);
        assert_eq!(garble_channel(&c, &GarblingKernel::identity(2).unwrap()).unwrap().rows(), c.rows());

        let total = GarblingKernel::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let g = garble_channel(&c, &total).unwrap();
        assert_eq!(g.rows()[0], g.rows()[1]);

        let flip = GarblingKernel::new(vec![vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let g = garble_channel(&ObservationChannel::identity(2, "id").unwrap(), &flip).unwrap();
        assert_eq!(g.rows(), &[vec![0.8, 0.2], vec![0.2, 0.8]]);

        let wide = GarblingKernel::identity(3).unwrap();
        assert!(matches!(garble_channel(&c, &wide), Err(BeliefError::DimensionMismatch(_))));
    }

    #[test]
    fn trajectory_empty_horizon() {
        let b0 = BeliefState::uniform(3).unwrap();
        let t = simulate_belief_trajectory(&b0, &[], 1, UncertaintyFunctional::Shannon, 1).unwrap();
        assert!(t.igs.is_empty());
        assert_eq!(t.beliefs.len(), 1);
        assert_eq!(t.total_ig(), 0.0);
    }

    #[test]
    fn trajectory_uninformative_channels() {
        let b0 = BeliefState::new(vec![0.2, 0.5, 0.3]).unwrap();
        let flat = ObservationChannel::uninformative(3, 4, "flat").unwrap();
        let t = simulate_belief_trajectory(&b0, &vec![flat; 5], 2, UncertaintyFunctional::Shannon, 3).unwrap();
        assert!(t.igs.iter().all(|ig| ig.abs() < 1e-15));
        for b in &t.beliefs {
            for (a, e) in b.probs().iter().zip(b0.probs()) {
                assert_abs_diff_eq!(a, e, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn trajectory_telescopes_seed_7() {
        let b0 = BeliefState::new(vec![0.5, 0.3, 0.2]).unwrap();
        let chans = vec![
            ch(vec![vec![0.7, 0.2, 0.1], vec![0.2, 0.6, 0.2], vec![0.1, 0.3, 0.6]]),
            ch(vec![vec![0.5, 0.5], vec![0.9, 0.1], vec![0.2, 0.8]]),
        ];
        let u = UncertaintyFunctional::Shannon;
        let t = simulate_belief_trajectory(&b0, &chans, 1, u, 7).unwrap();
        assert_eq!(t.igs.len(), 2);
        // recompute the path by hand from the recorded observations
        let b1 = bayes_update(&b0, &chans[0], t.observations[0]).unwrap();
        let b2 = bayes_update(&b1, &chans[1], t.observations[1]).unwrap();
        let lhs = t.igs[0] + t.igs[1];
        let rhs = shannon_uncertainty(&b0) - shannon_uncertainty(&b2);
        assert!((lhs - rhs).abs() <= 1e-9);
        assert_eq!(t.last(), &b2);
    }

    #[test]
    fn trajectory_rejects_bad_truth() {
        let b0 = BeliefState::uniform(2).unwrap();
        assert!(simulate_belief_trajectory(&b0, &[], 2, UncertaintyFunctional::Shannon, 0).is_err());
    }

    #[test]
    fn axioms_hold_for_shannon() {
        let report = check_axioms(UncertaintyFunctional::Shannon, 1000, 11);
        assert!(report.passes(1e-9), "{report:?}");
        let mixed = BeliefState::degenerate(2, 0)
            .unwrap()
            .mix(&BeliefState::degenerate(2, 1).unwrap(), 0.5)
            .unwrap();
        assert_abs_diff_eq!(shannon_uncertainty(&mixed), std::f64::consts::LN_2);
    }

    #[test]
    fn belief_serde_validates() {
        let b: BeliefState = serde_json::from_str("[0.25,0.75]").unwrap();
        assert_eq!(b.probs(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<BeliefState>("[0.5,0.6]").is_err());
    }
}
