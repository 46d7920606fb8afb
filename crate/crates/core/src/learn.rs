//! Crowd learning of lane anchors.
//!
//! Observations of one kind are clustered in space, each spatial cluster is
//! split by its lane-discriminating feature, and every resulting sub-cluster
//! becomes an anchor whose lane distribution is the mean of the reporters'
//! lane beliefs.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::anchor::{argmax_index, bootstrap_prior, Anchor, AnchorKind, FeatureScale};
use crate::error::{Error, Result};
use crate::events::{AnchorObservation, ObservationKind};
use crate::filter::{estimate_sigma_mad, LaneBelief};
use crate::geo::{centroid, haversine, LatLon, LocalFrame};
use crate::repo::AnchorStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub spatial_eps_m: f64,
    /// Curve radius difference, metres.
    pub curve_feature_eps: f64,
    /// Difference of natural logs of tunnel variances.
    pub tunnel_feature_eps: f64,
    pub min_pts: usize,
    /// A surface anomaly is a pothole when its largest lane probability is
    /// at least `anomaly_concentration / n`.
    pub anomaly_concentration: f64,
    /// Pseudo-count of the a-priori distribution of bootstrap anchors.
    pub bootstrap_prior_weight: f64,
    /// Reporters whose largest lane probability is below this do not vote
    /// on the lane distribution or the σ residuals.
    pub min_reporter_confidence: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            spatial_eps_m: 15.0,
            curve_feature_eps: 1.5,
            tunnel_feature_eps: 0.25,
            min_pts: 5,
            anomaly_concentration: 2.0,
            bootstrap_prior_weight: 10.0,
            min_reporter_confidence: 0.5,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.spatial_eps_m > 0.0 && self.curve_feature_eps > 0.0 && self.tunnel_feature_eps > 0.0) {
            return Err(Error::Config("clustering eps must be positive".into()));
        }
        if self.min_pts < 2 {
            return Err(Error::Config("min_pts must be at least 2".into()));
        }
        if !(self.anomaly_concentration > 0.0) || !(self.bootstrap_prior_weight >= 0.0) {
            return Err(Error::Config("anomaly concentration or prior weight out of range".into()));
        }
        if !(0.0..=1.0).contains(&self.min_reporter_confidence) {
            return Err(Error::Config("min_reporter_confidence must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Feature eps in the kind's comparison scale; `None` for kinds without
    /// a lane-discriminating feature.
    pub fn feature_eps(&self, kind: AnchorKind) -> Option<f64> {
        match kind {
            AnchorKind::Curve => Some(self.curve_feature_eps),
            AnchorKind::Tunnel => Some(self.tunnel_feature_eps),
            _ => None,
        }
    }
}

/// Result of a density clustering: member indices per cluster (ascending)
/// and the noise points.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Clustering {
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

/// DBSCAN over points `0..n` in index order. `neighbors(i)` must return
/// every point within eps of `i`, including `i` itself.
pub fn dbscan(n: usize, min_pts: usize, neighbors: impl Fn(usize) -> Vec<usize>) -> Clustering {
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for p in 0..n {
        if visited[p] {
            continue;
        }
        let nb = neighbors(p);
        if nb.len() < min_pts {
            continue;
        }
        visited[p] = true;
        let c = clusters.len();
        clusters.push(Vec::new());
        label[p] = Some(c);
        let mut queue = std::collections::VecDeque::from(nb);
        while let Some(q) = queue.pop_front() {
            if label[q].is_none() {
                label[q] = Some(c);
            }
            if visited[q] {
                continue;
            }
            let nq = neighbors(q);
            if nq.len() >= min_pts {
                visited[q] = true;
                queue.extend(nq.into_iter().filter(|&r| !visited[r]));
            }
        }
    }
    let mut noise = Vec::new();
    for (i, l) in label.iter().enumerate() {
        match l {
            Some(c) => clusters[*c].push(i),
            None => noise.push(i),
        }
    }
    Clustering { clusters, noise }
}

/// Spatial DBSCAN with the haversine metric. Points are taken in the given
/// order, which decides border-point assignment.
pub fn spatial_cluster(points: &[LatLon], eps_m: f64, min_pts: usize) -> Clustering {
    if points.is_empty() {
        return Clustering::default();
    }
    let frame = LocalFrame::new(centroid(points.iter().copied()).expect("non-empty"));
    let xy: Vec<(f64, f64)> = points.iter().map(|&p| frame.to_xy(p)).collect();
    let cell = eps_m * 1.1;
    let key = |(x, y): (f64, f64)| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in xy.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    dbscan(points.len(), min_pts, |i| {
        let (cx, cy) = key(xy[i]);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = grid.get(&(cx + dx, cy + dy)) {
                    out.extend(v.iter().copied().filter(|&j| haversine(points[i], points[j]) <= eps_m));
                }
            }
        }
        out.sort_unstable();
        out
    })
}

/// One-dimensional DBSCAN on feature values (already in comparison scale).
pub fn feature_cluster(values: &[f64], eps: f64, min_pts: usize) -> Clustering {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut rank = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    dbscan(values.len(), min_pts, |i| {
        let r = rank[i];
        let mut lo = r;
        while lo > 0 && values[i] - values[order[lo - 1]] <= eps {
            lo -= 1;
        }
        let mut hi = r;
        while hi + 1 < order.len() && values[order[hi + 1]] - values[i] <= eps {
            hi += 1;
        }
        let mut out: Vec<usize> = order[lo..=hi].to_vec();
        out.sort_unstable();
        out
    })
}

/// Entrywise mean of reporter beliefs.
pub fn aggregate_distribution(beliefs: &[&[f64]]) -> Result<Vec<f64>> {
    let first = beliefs
        .first()
        .ok_or_else(|| Error::Degenerate("no beliefs to aggregate".into()))?;
    let n = first.len();
    let mut acc = vec![0.0; n];
    for b in beliefs {
        if b.len() != n {
            return Err(Error::LengthMismatch(n, b.len()));
        }
        for (a, x) in acc.iter_mut().zip(b.iter()) {
            *a += x;
        }
    }
    let c = beliefs.len() as f64;
    Ok(acc.into_iter().map(|a| a / c).collect())
}

/// Narrow distributions are potholes, flat ones calming devices.
pub fn classify_anomaly_span(distribution: &[f64], concentration: f64) -> AnchorKind {
    let n = distribution.len() as f64;
    let max = distribution.iter().copied().fold(0.0, f64::max);
    if max >= concentration / n {
        AnchorKind::Pothole
    } else {
        AnchorKind::CalmingDevice
    }
}

/// Total variation distance `½ Σ |p_i − q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// TV distance between successive running means; entry `k` compares the
/// mean of the first `k + 2` beliefs with the mean of the first `k + 1`.
pub fn successive_tv(beliefs: &[&[f64]]) -> Result<Vec<f64>> {
    let Some(first) = beliefs.first() else {
        return Ok(Vec::new());
    };
    let mut sum: Vec<f64> = first.to_vec();
    let mut prev = sum.clone();
    let mut out = Vec::with_capacity(beliefs.len().saturating_sub(1));
    for (k, b) in beliefs.iter().enumerate().skip(1) {
        if b.len() != sum.len() {
            return Err(Error::LengthMismatch(sum.len(), b.len()));
        }
        for (s, x) in sum.iter_mut().zip(b.iter()) {
            *s += x;
        }
        let cur: Vec<f64> = sum.iter().map(|s| s / (k + 1) as f64).collect();
        out.push(tv_distance(&cur, &prev)?);
        prev = cur;
    }
    Ok(out)
}

/// An observation tagged with its origin in the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub trip: usize,
    pub seq: usize,
    pub observation: AnchorObservation,
}

/// Per-anchor learning diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorDiagnostics {
    pub id: String,
    pub support: usize,
    /// Successive-aggregate TV distances in contribution order.
    pub convergence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearnReport {
    pub anchors: Vec<Anchor>,
    pub diagnostics: Vec<AnchorDiagnostics>,
    /// Robust σ per kind from the observation-time residuals.
    pub sigmas: BTreeMap<AnchorKind, f64>,
    pub without_belief: usize,
    pub noise: usize,
}

impl LearnReport {
    pub fn into_store(self) -> Result<AnchorStore> {
        let mut store = AnchorStore::new();
        for a in self.anchors {
            store.insert(a)?;
        }
        for (k, s) in self.sigmas {
            store.set_sigma(k, s);
        }
        Ok(store)
    }
}

/// Learning group an observation belongs to.
fn group_of(kind: ObservationKind) -> Option<AnchorKind> {
    if kind.is_negative() {
        return None;
    }
    Some(match kind {
        ObservationKind::SurfaceAnomaly => AnchorKind::Pothole,
        k => k.learned_kind(),
    })
}

/// Flattens per-trip observation lists into canonical order: by time, then
/// trip, then position within the trip.
pub fn canonical_corpus(corpus: &[Vec<AnchorObservation>]) -> Vec<CorpusEntry> {
    let mut out: Vec<CorpusEntry> = corpus
        .iter()
        .enumerate()
        .flat_map(|(trip, obs)| {
            obs.iter().enumerate().map(move |(seq, o)| CorpusEntry {
                trip,
                seq,
                observation: o.clone(),
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.observation
            .t
            .total_cmp(&b.observation.t)
            .then(a.trip.cmp(&b.trip))
            .then(a.seq.cmp(&b.seq))
    });
    out
}

fn majority_len(beliefs: &[&Vec<f64>]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for b in beliefs {
        *counts.entry(b.len()).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(n, _)| n)
}

/// Spatial clustering, feature clustering and belief aggregation over a
/// crowd corpus (one observation list per trip).
pub fn learn_anchors(corpus: &[Vec<AnchorObservation>], params: &ClusterParams) -> Result<LearnReport> {
    params.validate()?;
    let entries = canonical_corpus(corpus);
    let mut report = LearnReport::default();
    let mut groups: BTreeMap<AnchorKind, Vec<&AnchorObservation>> = BTreeMap::new();
    for e in &entries {
        let o = &e.observation;
        let Some(g) = group_of(o.kind) else { continue };
        if o.reporter_belief.is_none() {
            report.without_belief += 1;
            continue;
        }
        groups.entry(g).or_default().push(o);
    }
    let mut residuals: BTreeMap<AnchorKind, Vec<f64>> = BTreeMap::new();
    let mut counters: BTreeMap<AnchorKind, usize> = BTreeMap::new();
    for (group, obs) in &groups {
        let points: Vec<LatLon> = obs.iter().map(|o| o.location).collect();
        let spatial = spatial_cluster(&points, params.spatial_eps_m, params.min_pts);
        report.noise += spatial.noise.len();
        for cluster in &spatial.clusters {
            let center = centroid(cluster.iter().map(|&i| points[i])).expect("non-empty cluster");
            let subs: Vec<Vec<usize>> = match (params.feature_eps(*group), FeatureScale::for_kind(*group)) {
                (Some(eps), Some(scale)) => {
                    let with_feature: Vec<usize> = cluster.iter().copied().filter(|&i| obs[i].feature.is_some()).collect();
                    let keys: Vec<f64> = with_feature.iter().map(|&i| scale.key(obs[i].feature.unwrap())).collect();
                    let fc = feature_cluster(&keys, eps, params.min_pts);
                    report.noise += fc.noise.len() + cluster.len() - with_feature.len();
                    fc.clusters
                        .into_iter()
                        .map(|c| c.into_iter().map(|k| with_feature[k]).collect())
                        .collect()
                }
                _ => vec![cluster.clone()],
            };
            for sub in subs {
                let raw: Vec<&Vec<f64>> = sub.iter().map(|&i| obs[i].reporter_belief.as_ref().unwrap()).collect();
                let n = majority_len(&raw);
                let beliefs: Vec<Vec<f64>> = raw
                    .iter()
                    .map(|b| {
                        if b.len() == n {
                            Ok((*b).clone())
                        } else {
                            LaneBelief::from_weights((*b).clone())?.reproject(n as u32).map(LaneBelief::into_probs)
                        }
                    })
                    .collect::<Result<_>>()?;
                let confident: Vec<&[f64]> = beliefs
                    .iter()
                    .map(Vec::as_slice)
                    .filter(|b| b.iter().cloned().fold(0.0, f64::max) >= params.min_reporter_confidence)
                    .collect();
                let all: Vec<&[f64]> = beliefs.iter().map(Vec::as_slice).collect();
                let convergence = successive_tv(&all)?;
                let prior = bootstrap_prior(*group, n as u32);
                // without a confident reporter the prior alone speaks for a
                // bootstrap anchor, and every reporter for an organic one
                let refs: Vec<&[f64]> = if confident.is_empty() && prior.is_none() { all } else { confident };
                let mut dist = if refs.is_empty() {
                    vec![1.0 / n as f64; n]
                } else {
                    aggregate_distribution(&refs)?
                };
                let kind = if *group == AnchorKind::Pothole {
                    classify_anomaly_span(&dist, params.anomaly_concentration)
                } else {
                    *group
                };
                if let Some(prior) = prior {
                    let c = refs.len() as f64;
                    let w = c / (c + params.bootstrap_prior_weight);
                    for (d, p) in dist.iter_mut().zip(prior) {
                        *d = w * *d + (1.0 - w) * p;
                    }
                }
                let s: f64 = dist.iter().sum();
                dist.iter_mut().for_each(|d| *d /= s);
                let anchor_lane = argmax_index(&dist) as f64;
                let res = residuals.entry(kind).or_default();
                for b in &refs {
                    res.push((argmax_index(b) as f64 - anchor_lane).abs());
                }
                let feats: Vec<f64> = sub.iter().filter_map(|&i| obs[i].feature).collect();
                let (feature_mean, feature_spread) = feature_stats(&feats, FeatureScale::for_kind(kind));
                let k = counters.entry(kind).or_default();
                let id = format!("{}-{:04}", kind.as_str(), *k);
                *k += 1;
                report.diagnostics.push(AnchorDiagnostics {
                    id: id.clone(),
                    support: sub.len(),
                    convergence,
                });
                report.anchors.push(Anchor {
                    id,
                    kind,
                    centroid: center,
                    lane_distribution: dist,
                    feature_mean,
                    feature_spread,
                    support_count: sub.len() as u32,
                });
            }
        }
    }
    report.sigmas = residuals.into_iter().map(|(k, r)| (k, estimate_sigma_mad(&r))).collect();
    Ok(report)
}

/// Mean (in comparison scale) and standard deviation of feature values.
fn feature_stats(values: &[f64], scale: Option<FeatureScale>) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let m = values.len() as f64;
    let mean = match scale {
        Some(FeatureScale::Log) => (values.iter().map(|&v| FeatureScale::Log.key(v)).sum::<f64>() / m).exp(),
        _ => values.iter().sum::<f64>() / m,
    };
    let arith = values.iter().sum::<f64>() / m;
    let spread = (values.iter().map(|v| (v - arith).powi(2)).sum::<f64>() / m).sqrt();
    (mean, spread)
}
