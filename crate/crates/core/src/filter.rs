//! Markov lane estimator.
//!
//! The belief is a probability mass function over the lanes of the current
//! road (lane 1 = left-most). Detected lane changes apply a transition kernel
//! built from the detector confusion matrix; detected anchors apply a
//! likelihood `P(ℓ|a) · N(|ℓ − ℓ_a|; σ)` and renormalise.

use serde::{Deserialize, Serialize};

use crate::anchor::{argmax_index, bootstrap_prior, validate_distribution, Anchor, AnchorKind, FeatureScale};
use crate::error::{Error, Result};
use crate::events::{AnchorObservation, DetectedEvent, MotionKind, ObservationKind};
use crate::repo::AnchorStore;

pub const MAD_SCALE: f64 = 1.4826;
pub const SIGMA_FLOOR: f64 = 0.25;
pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_ASSOCIATION_RADIUS_M: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneBelief(Vec<f64>);

impl LaneBelief {
    /// Uniform belief over `n` lanes.
    pub fn uniform(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidRoad("a road needs at least one lane".into()));
        }
        Ok(LaneBelief(vec![1.0 / n as f64; n as usize]))
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        validate_distribution(&probs)?;
        Ok(LaneBelief(probs))
    }

    /// Normalises non-negative weights into a belief.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate(format!("weights sum to {total}")));
        }
        Ok(LaneBelief(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.0
    }

    pub fn lane_count(&self) -> u32 {
        self.0.len() as u32
    }

    /// Most probable lane (1-based, lowest index on ties).
    pub fn argmax(&self) -> u32 {
        argmax_index(&self.0) as u32
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// Same belief with lane indexing reversed.
    pub fn mirrored(&self) -> Self {
        LaneBelief(self.0.iter().rev().copied().collect())
    }

    /// Re-projects onto a road with `n` lanes by stretching the cumulative
    /// mass function proportionally.
    pub fn reproject(&self, n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidRoad("a road needs at least one lane".into()));
        }
        let old = self.0.len();
        if n as usize == old {
            return Ok(self.clone());
        }
        let cdf = |x: f64| -> f64 {
            // mass spread uniformly inside each old lane
            let pos = x * old as f64;
            let full = (pos.floor() as usize).min(old);
            let mut acc: f64 = self.0[..full].iter().sum();
            if full < old {
                acc += self.0[full] * (pos - full as f64);
            }
            acc
        };
        let weights = (0..n)
            .map(|j| (cdf((j + 1) as f64 / n as f64) - cdf(j as f64 / n as f64)).max(0.0))
            .collect();
        LaneBelief::from_weights(weights)
    }
}

pub fn init_belief(n: u32) -> Result<LaneBelief> {
    LaneBelief::uniform(n)
}

pub fn argmax_lane(belief: &LaneBelief) -> u32 {
    belief.argmax()
}

/// `P(detected | actual)` over {left, right, none}. Row `d` holds the
/// transition weights used when `d` is detected: moving one lane left,
/// one lane right, or staying.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionConfusion {
    rows: [[f64; 3]; 3],
}

impl MotionConfusion {
    /// Rows indexed by detected kind, columns by actual kind, both in the
    /// order left, right, none.
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        for (d, row) in rows.iter().enumerate() {
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidDistribution(format!("confusion row {d} has a negative entry")));
            }
            if row.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidDistribution(format!("confusion row {d} is all zero")));
            }
        }
        Ok(Self { rows })
    }

    /// Detector error profile used by default: 90% of detected changes are
    /// real, 2% are changes in the opposite direction, 8% are spurious.
    pub fn calibrated() -> Self {
        Self {
            rows: [[0.9, 0.02, 0.08], [0.02, 0.9, 0.08], [0.05, 0.05, 0.9]],
        }
    }

    pub fn perfect() -> Self {
        Self {
            rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// `P(detected | actual)`.
    pub fn p(&self, detected: MotionKind, actual: MotionKind) -> f64 {
        self.rows[detected.index()][actual.index()]
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        self.rows
    }

    /// Swaps the roles of left and right.
    pub fn mirrored(&self) -> Self {
        let perm = [1usize, 0, 2];
        let mut rows = [[0.0; 3]; 3];
        for d in 0..3 {
            for a in 0..3 {
                rows[perm[d]][perm[a]] = self.rows[d][a];
            }
        }
        Self { rows }
    }
}

impl Default for MotionConfusion {
    fn default() -> Self {
        Self::calibrated()
    }
}

/// Total-probability update on a detected motion event. Transitions that
/// would leave the road land on the boundary lane.
pub fn motion_update(belief: &LaneBelief, detected: MotionKind, confusion: &MotionConfusion) -> Result<LaneBelief> {
    let n = belief.0.len();
    let w_left = confusion.p(detected, MotionKind::Left);
    let w_right = confusion.p(detected, MotionKind::Right);
    let w_stay = confusion.p(detected, MotionKind::None);
    let mut out = vec![0.0; n];
    for (i, &b) in belief.0.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        out[i.saturating_sub(1)] += w_left * b;
        out[(i + 1).min(n - 1)] += w_right * b;
        out[i] += w_stay * b;
    }
    LaneBelief::from_weights(out)
}

/// `P(a | ℓ) = P(ℓ|a) · exp(−½(|ℓ − ℓ_a|/σ)²) / (√(2π) σ)` with `ℓ_a` the
/// argmax of the anchor's lane distribution.
pub fn perception_likelihood(lane_distribution: &[f64], sigma: f64) -> Vec<f64> {
    let anchor_lane = argmax_index(lane_distribution) as f64;
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    lane_distribution
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let z = ((i + 1) as f64 - anchor_lane).abs() / sigma;
            p * norm * (-0.5 * z * z).exp()
        })
        .collect()
}

/// Bayes update with an arbitrary per-lane likelihood.
pub fn apply_likelihood(belief: &LaneBelief, likelihood: &[f64]) -> Result<LaneBelief> {
    if likelihood.len() != belief.0.len() {
        return Err(Error::LengthMismatch(belief.0.len(), likelihood.len()));
    }
    let post: Vec<f64> = belief.0.iter().zip(likelihood).map(|(b, l)| b * l).collect();
    let total: f64 = post.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AnchorMismatch);
    }
    Ok(LaneBelief(post.into_iter().map(|x| x / total).collect()))
}

pub fn perception_update(belief: &LaneBelief, lane_distribution: &[f64], sigma: f64) -> Result<LaneBelief> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidDistribution(format!("sigma must be positive, got {sigma}")));
    }
    apply_likelihood(belief, &perception_likelihood(lane_distribution, sigma))
}

/// Negative information for an untaken special lane:
/// `c(ℓ) ∝ max P − P(ℓ)`, uniform when `P` is uniform.
pub fn complement_distribution(p: &[f64]) -> Vec<f64> {
    let max = p.iter().copied().fold(0.0, f64::max);
    let c: Vec<f64> = p.iter().map(|&x| max - x).collect();
    let total: f64 = c.iter().sum();
    if total <= 0.0 {
        vec![1.0 / p.len() as f64; p.len()]
    } else {
        c.into_iter().map(|x| x / total).collect()
    }
}

/// Robust σ: 1.4826 × lower median of the residuals, floored at a quarter
/// lane; 1.0 when there is nothing to estimate from.
pub fn estimate_sigma_mad(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return DEFAULT_SIGMA;
    }
    let mut r: Vec<f64> = residuals.iter().map(|x| x.abs()).collect();
    r.sort_by(f64::total_cmp);
    let median = r[(r.len() - 1) / 2];
    (MAD_SCALE * median).max(SIGMA_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub association_radius_m: f64,
    pub default_sigma: f64,
    /// Largest curve radius difference, metres, at which an observation
    /// still refers to a learned curve.
    pub curve_feature_tolerance: f64,
    /// Same for tunnels, as a difference of natural logs of variances.
    pub tunnel_feature_tolerance: f64,
    /// Treat the absence of a lane-change detection since the previous
    /// event as a detected no-change, applied before each anchor update.
    pub idle_motion: bool,
}

impl FilterConfig {
    fn feature_tolerance(&self, kind: ObservationKind) -> f64 {
        match kind {
            ObservationKind::Curve => self.curve_feature_tolerance,
            ObservationKind::Tunnel => self.tunnel_feature_tolerance,
            _ => f64::INFINITY,
        }
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            association_radius_m: DEFAULT_ASSOCIATION_RADIUS_M,
            default_sigma: DEFAULT_SIGMA,
            curve_feature_tolerance: 2.0,
            tunnel_feature_tolerance: 0.35,
            idle_motion: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateSource {
    Initial,
    Motion,
    Perception,
    /// Complement update from an untaken merge/exit lane.
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneEstimate {
    pub t: f64,
    pub lane: u32,
    pub belief: LaneBelief,
    pub source: UpdateSource,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FilterDiagnostics {
    pub motion_updates: usize,
    pub perception_updates: usize,
    /// Anchor events with no matching anchor in range.
    pub skipped_no_anchor: usize,
    /// Matched anchors carrying no lane information (calming devices).
    pub skipped_uninformative: usize,
    pub anchor_mismatch: usize,
    pub lane_count_mismatch: usize,
}

/// How an anchor observation feeds the filter.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    Apply {
        anchor_id: Option<String>,
        kind: AnchorKind,
        distribution: Vec<f64>,
        sigma: f64,
        negative: bool,
    },
    NoAnchor,
    Uninformative,
    LaneCountMismatch,
}

/// Finds the anchor an observation refers to: the nearest anchor of a
/// matching kind within the association radius, or for curves and tunnels
/// the one whose feature is closest, provided it is within the feature
/// tolerance. Bootstrap kinds fall back to their
/// a-priori distribution when the repository has nothing nearby.
pub fn resolve_observation(obs: &AnchorObservation, repo: &AnchorStore, n: u32, cfg: &FilterConfig) -> Resolution {
    let kinds = obs.kind.anchor_kinds();
    let hits = repo.query_nearby(obs.location, cfg.association_radius_m, Some(kinds));
    let chosen: Option<&Anchor> = match (obs.kind, obs.feature) {
        (ObservationKind::Curve | ObservationKind::Tunnel, Some(f)) => {
            let scale = FeatureScale::for_kind(obs.kind.learned_kind()).unwrap_or(FeatureScale::Linear);
            let key = scale.key(f);
            let gap = |a: &Anchor| (scale.key(a.feature_mean) - key).abs();
            hits.iter()
                .min_by(|a, b| {
                    gap(a.0).total_cmp(&gap(b.0)).then(a.1.total_cmp(&b.1)).then_with(|| a.0.id.cmp(&b.0.id))
                })
                .map(|h| h.0)
                .filter(|a| gap(a) <= cfg.feature_tolerance(obs.kind))
        }
        _ => hits.first().map(|h| h.0),
    };
    let negative = obs.kind.is_negative();
    let (anchor_id, kind, distribution) = match chosen {
        Some(a) => {
            if !a.kind.is_lane_informative() {
                return Resolution::Uninformative;
            }
            if a.lane_count() != n as usize {
                return Resolution::LaneCountMismatch;
            }
            (Some(a.id.clone()), a.kind, a.lane_distribution.clone())
        }
        None => {
            let kind = obs.kind.learned_kind();
            match bootstrap_prior(kind, n) {
                Some(p) => (None, kind, p),
                None => return Resolution::NoAnchor,
            }
        }
    };
    let sigma = repo.sigma(kind).unwrap_or(cfg.default_sigma);
    let distribution = if negative {
        complement_distribution(&distribution)
    } else {
        distribution
    };
    Resolution::Apply {
        anchor_id,
        kind,
        distribution,
        sigma,
        negative,
    }
}

/// Sequential lane estimator for one vehicle.
#[derive(Debug, Clone)]
pub struct LaneFilter {
    belief: LaneBelief,
    confusion: MotionConfusion,
    cfg: FilterConfig,
    diagnostics: FilterDiagnostics,
}

impl LaneFilter {
    pub fn new(n: u32, confusion: MotionConfusion, cfg: FilterConfig) -> Result<Self> {
        Ok(Self {
            belief: init_belief(n)?,
            confusion,
            cfg,
            diagnostics: FilterDiagnostics::default(),
        })
    }

    pub fn belief(&self) -> &LaneBelief {
        &self.belief
    }

    pub fn diagnostics(&self) -> FilterDiagnostics {
        self.diagnostics
    }

    fn estimate(&self, t: f64, source: UpdateSource) -> LaneEstimate {
        LaneEstimate {
            t,
            lane: self.belief.argmax(),
            belief: self.belief.clone(),
            source,
        }
    }

    /// Applies one event; returns the new estimate when the belief was
    /// updated.
    pub fn step(&mut self, event: &DetectedEvent, repo: &AnchorStore) -> Result<Option<LaneEstimate>> {
        match event {
            DetectedEvent::RoadChange { lane_count, .. } => {
                self.belief = self.belief.reproject(*lane_count)?;
                Ok(None)
            }
            DetectedEvent::Motion(m) => {
                self.belief = motion_update(&self.belief, m.kind, &self.confusion)?;
                self.diagnostics.motion_updates += 1;
                Ok(Some(self.estimate(m.t, UpdateSource::Motion)))
            }
            DetectedEvent::Anchor(obs) => {
                match resolve_observation(obs, repo, self.belief.lane_count(), &self.cfg) {
                    Resolution::Apply {
                        distribution,
                        sigma,
                        negative,
                        ..
                    } => {
                        let prior = if self.cfg.idle_motion {
                            motion_update(&self.belief, MotionKind::None, &self.confusion)?
                        } else {
                            self.belief.clone()
                        };
                        let updated = if negative {
                            apply_likelihood(&prior, &distribution)
                        } else {
                            perception_update(&prior, &distribution, sigma)
                        };
                        match updated {
                            Ok(b) => {
                                self.belief = b;
                                self.diagnostics.perception_updates += 1;
                                let source = if negative { UpdateSource::Negative } else { UpdateSource::Perception };
                                Ok(Some(self.estimate(obs.t, source)))
                            }
                            Err(Error::AnchorMismatch) => {
                                self.diagnostics.anchor_mismatch += 1;
                                Ok(None)
                            }
                            Err(e) => Err(e),
                        }
                    }
                    Resolution::NoAnchor => {
                        self.diagnostics.skipped_no_anchor += 1;
                        Ok(None)
                    }
                    Resolution::Uninformative => {
                        self.diagnostics.skipped_uninformative += 1;
                        Ok(None)
                    }
                    Resolution::LaneCountMismatch => {
                        self.diagnostics.lane_count_mismatch += 1;
                        Ok(None)
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    /// Initial estimate followed by one estimate per applied update.
    pub estimates: Vec<LaneEstimate>,
    pub diagnostics: FilterDiagnostics,
    /// Belief just before each event (aligned with the input events).
    pub prior_beliefs: Vec<LaneBelief>,
}

/// Runs the estimator over a time-ordered event stream starting from a
/// uniform belief over `n` lanes.
pub fn run_filter(
    events: &[DetectedEvent],
    repo: &AnchorStore,
    confusion: &MotionConfusion,
    n: u32,
    cfg: &FilterConfig,
) -> Result<FilterRun> {
    let mut filter = LaneFilter::new(n, *confusion, *cfg)?;
    let t0 = events.first().map_or(0.0, |e| e.t().min(0.0));
    let mut estimates = vec![filter.estimate(t0, UpdateSource::Initial)];
    let mut prior_beliefs = Vec::with_capacity(events.len());
    let mut last_t = f64::NEG_INFINITY;
    for e in events {
        if e.t() < last_t {
            return Err(Error::Validation(format!("events out of order at t={}", e.t())));
        }
        last_t = e.t();
        prior_beliefs.push(filter.belief.clone());
        if let Some(est) = filter.step(e, repo)? {
            estimates.push(est);
        }
    }
    Ok(FilterRun {
        estimates,
        diagnostics: filter.diagnostics,
        prior_beliefs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[f64]) -> LaneBelief {
        LaneBelief::from_probs(v.to_vec()).unwrap()
    }

    #[test]
    fn init_belief_cases() {
        assert_eq!(init_belief(1).unwrap().probs(), &[1.0]);
        assert_eq!(init_belief(4).unwrap().probs(), &[0.25; 4]);
        let three: f64 = init_belief(3).unwrap().probs().iter().sum();
        assert!((three - 1.0).abs() < 1e-15);
        assert!(matches!(init_belief(0), Err(Error::InvalidRoad(_))));
    }

    #[test]
    fn deterministic_shift_and_boundary_clamp() {
        let p = MotionConfusion::perfect();
        assert_eq!(motion_update(&b(&[1.0, 0.0, 0.0]), MotionKind::Right, &p).unwrap().probs(), &[0.0, 1.0, 0.0]);
        assert_eq!(motion_update(&b(&[0.0, 0.0, 1.0]), MotionKind::Right, &p).unwrap().probs(), &[0.0, 0.0, 1.0]);
        assert_eq!(motion_update(&b(&[1.0, 0.0, 0.0]), MotionKind::Left, &p).unwrap().probs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax_lane(&b(&[0.2, 0.5, 0.3])), 2);
        assert_eq!(argmax_lane(&init_belief(4).unwrap()), 1);
        assert_eq!(argmax_lane(&b(&[0.4, 0.4, 0.2])), 1);
    }

    #[test]
    fn mad_sigma() {
        assert_eq!(estimate_sigma_mad(&[0.0, 0.0, 0.0]), 0.25);
        assert_eq!(estimate_sigma_mad(&[1.0, 1.0, 1.0]), 1.4826);
        assert_eq!(estimate_sigma_mad(&[0.0, 1.0, 2.0, 5.0]), 1.4826);
        assert_eq!(estimate_sigma_mad(&[]), 1.0);
    }

    #[test]
    fn peaked_anchor_dominates() {
        let post = perception_update(&init_belief(3).unwrap(), &[0.0, 1.0, 0.0], 0.5).unwrap();
        assert_eq!(post.probs(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn annihilating_anchor_is_a_mismatch() {
        let r = perception_update(&b(&[1.0, 0.0, 0.0]), &[0.0, 0.0, 1.0], 0.5);
        assert!(matches!(r, Err(Error::AnchorMismatch)));
    }

    #[test]
    fn complement_of_edge_distribution() {
        let c = complement_distribution(&[0.0, 0.0, 0.1, 0.9]);
        assert_eq!(c[3], 0.0);
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(complement_distribution(&[0.25; 4]), vec![0.25; 4]);
    }

    #[test]
    fn reprojection_preserves_mass_layout() {
        let r = init_belief(4).unwrap().reproject(5).unwrap();
        for p in r.probs() {
            assert!((p - 0.2).abs() < 1e-12);
        }
        let r = b(&[1.0, 0.0, 0.0, 0.0]).reproject(2).unwrap();
        assert_eq!(r.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn empty_stream_gives_initial_estimate() {
        let run = run_filter(&[], &AnchorStore::new(), &MotionConfusion::calibrated(), 4, &FilterConfig::default()).unwrap();
        assert_eq!(run.estimates.len(), 1);
        assert_eq!(run.estimates[0].lane, 1);
        assert_eq!(run.estimates[0].belief.probs(), &[0.25; 4]);
    }
}
