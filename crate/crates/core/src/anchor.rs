//! Lane anchors: landmarks whose detection constrains the driven lane.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::LatLon;
use crate::trace::Side;

/// Kind of a stored anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnchorKind {
    TurnLeft,
    TurnRight,
    UTurn,
    Merge(Side),
    Exit(Side),
    Stop,
    Curve,
    Tunnel,
    Pothole,
    CalmingDevice,
}

impl AnchorKind {
    pub const ALL: [AnchorKind; 12] = [
        AnchorKind::TurnLeft,
        AnchorKind::TurnRight,
        AnchorKind::UTurn,
        AnchorKind::Merge(Side::Left),
        AnchorKind::Merge(Side::Right),
        AnchorKind::Exit(Side::Left),
        AnchorKind::Exit(Side::Right),
        AnchorKind::Stop,
        AnchorKind::Curve,
        AnchorKind::Tunnel,
        AnchorKind::Pothole,
        AnchorKind::CalmingDevice,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnchorKind::TurnLeft => "turn-left",
            AnchorKind::TurnRight => "turn-right",
            AnchorKind::UTurn => "uturn",
            AnchorKind::Merge(Side::Left) => "merge-left",
            AnchorKind::Merge(Side::Right) => "merge-right",
            AnchorKind::Exit(Side::Left) => "exit-left",
            AnchorKind::Exit(Side::Right) => "exit-right",
            AnchorKind::Stop => "stop",
            AnchorKind::Curve => "curve",
            AnchorKind::Tunnel => "tunnel",
            AnchorKind::Pothole => "pothole",
            AnchorKind::CalmingDevice => "calming",
        }
    }

    /// Bootstrap anchors have a lane distribution known before any crowd data.
    pub fn is_bootstrap(self) -> bool {
        matches!(
            self,
            AnchorKind::TurnLeft
                | AnchorKind::TurnRight
                | AnchorKind::UTurn
                | AnchorKind::Merge(_)
                | AnchorKind::Exit(_)
                | AnchorKind::Stop
        )
    }

    /// Side of the road the a-priori distribution is skewed toward.
    pub fn bootstrap_side(self) -> Option<Side> {
        match self {
            AnchorKind::TurnLeft | AnchorKind::UTurn => Some(Side::Left),
            AnchorKind::TurnRight | AnchorKind::Stop => Some(Side::Right),
            AnchorKind::Merge(s) | AnchorKind::Exit(s) => Some(s),
            _ => None,
        }
    }

    /// Whether the anchor carries lane information usable by the filter.
    pub fn is_lane_informative(self) -> bool {
        self != AnchorKind::CalmingDevice
    }
}

impl fmt::Display for AnchorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnchorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "turn-left" => AnchorKind::TurnLeft,
            "turn-right" => AnchorKind::TurnRight,
            "uturn" => AnchorKind::UTurn,
            "merge-left" => AnchorKind::Merge(Side::Left),
            "merge-right" => AnchorKind::Merge(Side::Right),
            "exit-left" => AnchorKind::Exit(Side::Left),
            "exit-right" => AnchorKind::Exit(Side::Right),
            "stop" => AnchorKind::Stop,
            "curve" => AnchorKind::Curve,
            "tunnel" => AnchorKind::Tunnel,
            "pothole" => AnchorKind::Pothole,
            "calming" => AnchorKind::CalmingDevice,
            _ => return Err(Error::InvalidDistribution(format!("unknown anchor kind {s:?}"))),
        })
    }
}

/// Skewed a-priori distribution for bootstrap anchors: mass decays as
/// `exp(-2k)` with the lane distance `k` from the anchor's edge lane.
pub fn bootstrap_prior(kind: AnchorKind, n: u32) -> Option<Vec<f64>> {
    let side = kind.bootstrap_side()?;
    let edge = side.edge_lane(n);
    let mut p: Vec<f64> = (1..=n)
        .map(|l| (-2.0 * (l as f64 - edge as f64).abs()).exp())
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    Some(p)
}

/// How the lane-discriminating feature is compared between observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureScale {
    Linear,
    /// Variances spread multiplicatively, so they are compared in log space.
    Log,
}

impl FeatureScale {
    pub fn for_kind(kind: AnchorKind) -> Option<FeatureScale> {
        match kind {
            AnchorKind::Curve => Some(FeatureScale::Linear),
            AnchorKind::Tunnel => Some(FeatureScale::Log),
            _ => None,
        }
    }

    pub fn key(self, v: f64) -> f64 {
        match self {
            FeatureScale::Linear => v,
            FeatureScale::Log => v.max(1e-12).ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub id: String,
    pub kind: AnchorKind,
    pub centroid: LatLon,
    /// P(lane | anchor), lane 1 first.
    pub lane_distribution: Vec<f64>,
    pub feature_mean: f64,
    pub feature_spread: f64,
    pub support_count: u32,
}

impl Anchor {
    pub fn lane_count(&self) -> usize {
        self.lane_distribution.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidDistribution(format!("bad anchor id {:?}", self.id)));
        }
        if !self.centroid.is_valid() {
            return Err(Error::InvalidDistribution(format!("anchor {} has an invalid centroid", self.id)));
        }
        validate_distribution(&self.lane_distribution)
            .map_err(|e| Error::InvalidDistribution(format!("anchor {}: {e}", self.id)))?;
        if !self.feature_mean.is_finite() || !self.feature_spread.is_finite() {
            return Err(Error::InvalidDistribution(format!("anchor {} has a non-finite feature", self.id)));
        }
        Ok(())
    }
}

pub fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty distribution".into()));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidDistribution(format!("negative or non-finite entry in {p:?}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("entries sum to {s}")));
    }
    Ok(())
}

/// 1-based index of the largest entry, lowest index on ties.
pub fn argmax_index(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best + 1
}
