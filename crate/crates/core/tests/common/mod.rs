//! Independent reference implementations shared by the oracle suites.

#![allow(dead_code)]

use lanequest::anchor::{Anchor, AnchorKind};
use lanequest::events::{AnchorObservation, DetectedEvent, MotionEvent, MotionKind, ObservationKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use lanequest::geo::LatLon;
use lanequest::repo::AnchorStore;

pub const BASE: LatLon = LatLon { lat: 31.2, lon: 29.9 };

/// Five-symbol alphabet: two lane changes and three anchor archetypes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Symbol {
    Left,
    Right,
    Anchor(usize),
}

pub const ALPHABET: [Symbol; 5] = [Symbol::Left, Symbol::Right, Symbol::Anchor(0), Symbol::Anchor(1), Symbol::Anchor(2)];

pub const POTHOLE_SIGMA: f64 = 0.7;

fn archetype_location(k: usize) -> LatLon {
    LatLon::new(BASE.lat, BASE.lon + 0.01 * (k as f64 + 1.0))
}

/// Lane distributions of the three archetypes on an `n`-lane road: one
/// peaked on the right edge, one spread with a zero on lane 1, one peaked on
/// the middle lane.
pub fn archetypes(n: usize) -> [Vec<f64>; 3] {
    let norm = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let right = norm((1..=n).map(|l| 1.0 + 3.0 * (l * l) as f64).collect());
    let spread = if n == 1 { vec![1.0] } else { norm((1..=n).map(|l| if l == 1 { 0.0 } else { 1.0 + 0.3 * l as f64 }).collect()) };
    let mid = (n + 1) / 2;
    let middle = norm((1..=n).map(|l| if l == mid { 6.0 } else { 1.0 / l as f64 }).collect());
    [right, spread, middle]
}

pub fn archetype_store(n: usize) -> AnchorStore {
    let mut store = AnchorStore::new();
    for (k, dist) in archetypes(n).into_iter().enumerate() {
        store
            .insert(Anchor {
                id: format!("a{k}"),
                kind: AnchorKind::Pothole,
                centroid: archetype_location(k),
                lane_distribution: dist,
                feature_mean: 0.0,
                feature_spread: 0.0,
                support_count: 10,
            })
            .unwrap();
    }
    store.set_sigma(AnchorKind::Pothole, POTHOLE_SIGMA);
    store
}

pub fn to_events(seq: &[Symbol]) -> Vec<DetectedEvent> {
    seq.iter()
        .enumerate()
        .map(|(i, s)| {
            let t = 10.0 * (i + 1) as f64;
            match s {
                Symbol::Left | Symbol::Right => DetectedEvent::Motion(MotionEvent {
                    t,
                    kind: if *s == Symbol::Left { MotionKind::Left } else { MotionKind::Right },
                    peak_delta: 2.0,
                    location: None,
                }),
                Symbol::Anchor(k) => DetectedEvent::Anchor(AnchorObservation::new(
                    t,
                    ObservationKind::SurfaceAnomaly,
                    archetype_location(*k),
                )),
            }
        })
        .collect()
}

/// Transition matrix `m[to][from]` for a detected motion under confusion
/// rows `(left, right, none)` by detected kind; moves off the road stay on
/// the edge lane.
fn transition(n: usize, w: [f64; 3]) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for from in 0..n {
        let left = if from == 0 { 0 } else { from - 1 };
        let right = if from + 1 == n { from } else { from + 1 };
        m[left][from] += w[0];
        m[right][from] += w[1];
        m[from][from] += w[2];
    }
    m
}

/// Forward recursion on unnormalised joint weights `α(ℓ) = P(ℓ, events)`,
/// normalised only when a belief is read out. Returns the belief after
/// every event.
pub fn forward_oracle(n: usize, seq: &[Symbol], rows: [[f64; 3]; 3], idle_motion: bool) -> Vec<Vec<f64>> {
    let dists = archetypes(n);
    let mut alpha = vec![1.0 / n as f64; n];
    let mut out = Vec::new();
    let apply = |alpha: &Vec<f64>, m: &Vec<Vec<f64>>| -> Vec<f64> {
        (0..n).map(|to| (0..n).map(|from| m[to][from] * alpha[from]).sum()).collect()
    };
    for s in seq {
        match s {
            Symbol::Left => alpha = apply(&alpha, &transition(n, rows[0])),
            Symbol::Right => alpha = apply(&alpha, &transition(n, rows[1])),
            Symbol::Anchor(k) => {
                let moved = if idle_motion { apply(&alpha, &transition(n, rows[2])) } else { alpha.clone() };
                let p = &dists[*k];
                let mut best = 0;
                for l in 1..n {
                    if p[l] > p[best] {
                        best = l;
                    }
                }
                let post: Vec<f64> = (0..n)
                    .map(|l| {
                        let z = (l as f64 - best as f64) / POTHOLE_SIGMA;
                        moved[l] * p[l] * (-0.5 * z * z).exp()
                    })
                    .collect();
                if post.iter().sum::<f64>() > 0.0 {
                    alpha = post;
                }
            }
        }
        let total: f64 = alpha.iter().sum();
        out.push(alpha.iter().map(|a| a / total).collect());
    }
    out
}

/// Reference DBSCAN from a full distance matrix: clusters are connected
/// components of core points, numbered by their lowest core index; a border
/// point joins the first such cluster with a core neighbour.
pub fn dbscan_oracle(n: usize, min_pts: usize, within: impl Fn(usize, usize) -> bool) -> (Vec<Vec<usize>>, Vec<usize>) {
    let nbrs: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| within(i, j)).collect()).collect();
    let core: Vec<bool> = nbrs.iter().map(|v| v.len() >= min_pts).collect();
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for i in 0..n {
        if !core[i] || comp[i] != usize::MAX {
            continue;
        }
        let mut stack = vec![i];
        comp[i] = count;
        while let Some(p) = stack.pop() {
            for &q in &nbrs[p] {
                if core[q] && comp[q] == usize::MAX {
                    comp[q] = count;
                    stack.push(q);
                }
            }
        }
        count += 1;
    }
    let mut clusters = vec![Vec::new(); count];
    let mut noise = Vec::new();
    for i in 0..n {
        let c = if core[i] {
            Some(comp[i])
        } else {
            nbrs[i].iter().filter(|&&q| core[q]).map(|&q| comp[q]).min()
        };
        match c {
            Some(c) => clusters[c].push(i),
            None => noise.push(i),
        }
    }
    (clusters, noise)
}

/// Point displaced by metres east and north.
pub fn offset(p: LatLon, east_m: f64, north_m: f64) -> LatLon {
    let dlat = north_m / 111_195.0;
    let dlon = east_m / (111_195.0 * p.lat.to_radians().cos());
    LatLon::new(p.lat + dlat, p.lon + dlon)
}

/// Organic anchors with known lane distributions, each reported by 40 cars
/// whose beliefs put 70 to 98% on the lane they actually drove.
pub fn synthetic_corpus(seed: u64) -> (Vec<(ObservationKind, LatLon, Vec<f64>)>, Vec<Vec<AnchorObservation>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let mut truth = Vec::new();
    for k in 0..10 {
        let at = offset(BASE, 400.0 * k as f64, 0.0);
        let (kind, q) = match k % 3 {
            0 => (ObservationKind::SurfaceAnomaly, {
                let mut q = vec![0.02; n];
                q[k % n] = 0.8;
                q[(k + 1) % n] += 0.14;
                q
            }),
            1 => (ObservationKind::Curve, { let mut q = vec![0.0; n]; q[k % n] = 1.0; q }),
            _ => (ObservationKind::Tunnel, { let mut q = vec![0.0; n]; q[(k + 2) % n] = 1.0; q }),
        };
        truth.push((kind, at, q));
    }
    let mut trips: Vec<Vec<AnchorObservation>> = vec![Vec::new(); 40];
    for (k, (kind, at, q)) in truth.iter().enumerate() {
        for (trip, obs) in trips.iter_mut().enumerate() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let lane = q.iter().position(|p| { acc += p; u < acc }).unwrap_or(n - 1);
            let c: f64 = rng.random_range(0.7..0.98);
            let belief: Vec<f64> = (0..n).map(|l| if l == lane { c } else { (1.0 - c) / (n - 1) as f64 }).collect();
            let loc = offset(*at, rng.random_range(-6.0..6.0), rng.random_range(-4.0..4.0));
            let feature = match kind {
                ObservationKind::Curve => Some(80.0 + 3.5 * (n - 1 - lane) as f64 + rng.random_range(-0.3..0.3)),
                ObservationKind::Tunnel => Some(20.0 / 2f64.powi(lane as i32) * rng.random_range(0.95..1.05)),
                _ => Some(rng.random_range(0.5..2.0)),
            };
            let mut o = AnchorObservation::new(100.0 * k as f64 + trip as f64 * 1e-3, *kind, loc);
            o.feature = feature;
            o.reporter_belief = Some(belief);
            obs.push(o);
        }
    }
    (truth, trips)
}
