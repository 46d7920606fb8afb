//! Anchor repository: id-indexed anchors with a lat/lon grid for proximity
//! queries, per-kind perception σ, and a text persistence format.
//!
//! ```text
//! #lanequest-anchors v1
//! A <id> <kind> <lat> <lon> <n> <p1..pn> <featureMean> <featureSpread> <supportCount>
//! S <kind> <sigma>
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::anchor::{Anchor, AnchorKind};
use crate::error::{Error, Result};
use crate::geo::{haversine, LatLon, EARTH_RADIUS_M};

pub const ANCHORS_HEADER: &str = "#lanequest-anchors v1";

/// Grid cell size in degrees (~110 m of latitude).
const CELL_DEG: f64 = 0.001;

type Cell = (i64, i64);

fn cell_of(p: LatLon) -> Cell {
    ((p.lat / CELL_DEG).floor() as i64, (p.lon / CELL_DEG).floor() as i64)
}

#[derive(Debug, Clone, Default)]
pub struct AnchorStore {
    anchors: BTreeMap<String, Anchor>,
    grid: HashMap<Cell, BTreeSet<String>>,
    sigma: BTreeMap<AnchorKind, f64>,
}

impl PartialEq for AnchorStore {
    fn eq(&self, other: &Self) -> bool {
        self.anchors == other.anchors && self.sigma == other.sigma
    }
}

impl AnchorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Anchor> {
        self.anchors.get(id)
    }

    /// Anchors in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Anchor> {
        self.anchors.values()
    }

    /// Inserts or replaces (by id) an anchor.
    pub fn insert(&mut self, anchor: Anchor) -> Result<()> {
        anchor.validate()?;
        self.remove(&anchor.id);
        self.grid
            .entry(cell_of(anchor.centroid))
            .or_default()
            .insert(anchor.id.clone());
        self.anchors.insert(anchor.id.clone(), anchor);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Option<Anchor> {
        let old = self.anchors.remove(id)?;
        let cell = cell_of(old.centroid);
        if let Some(ids) = self.grid.get_mut(&cell) {
            ids.remove(id);
            if ids.is_empty() {
                self.grid.remove(&cell);
            }
        }
        Some(old)
    }

    pub fn set_sigma(&mut self, kind: AnchorKind, sigma: f64) {
        self.sigma.insert(kind, sigma);
    }

    pub fn sigma(&self, kind: AnchorKind) -> Option<f64> {
        self.sigma.get(&kind).copied()
    }

    pub fn sigmas(&self) -> &BTreeMap<AnchorKind, f64> {
        &self.sigma
    }

    /// Anchors within `radius_m` (haversine, inclusive) whose kind is in
    /// `kinds` (all kinds when `None`), nearest first, ties by id.
    pub fn query_nearby(&self, at: LatLon, radius_m: f64, kinds: Option<&[AnchorKind]>) -> Vec<(&Anchor, f64)> {
        let candidates: Vec<&Anchor> = match self.cell_range(at, radius_m) {
            Some((lat0, lat1, lon0, lon1)) => {
                let mut v = Vec::new();
                for i in lat0..=lat1 {
                    for j in lon0..=lon1 {
                        if let Some(ids) = self.grid.get(&(i, j)) {
                            v.extend(ids.iter().map(|id| &self.anchors[id]));
                        }
                    }
                }
                v
            }
            None => self.anchors.values().collect(),
        };
        let mut hits: Vec<(&Anchor, f64)> = candidates
            .into_iter()
            .filter(|a| kinds.is_none_or(|ks| ks.contains(&a.kind)))
            .map(|a| (a, haversine(at, a.centroid)))
            .filter(|&(_, d)| d <= radius_m)
            .collect();
        hits.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)));
        hits
    }

    /// Grid cells that can hold an anchor within `radius_m`, or `None` when
    /// the bound degenerates (poles, antimeridian, huge radii).
    fn cell_range(&self, at: LatLon, radius_m: f64) -> Option<(i64, i64, i64, i64)> {
        let ang = radius_m / EARTH_RADIUS_M;
        if !(ang < 0.5) {
            return None;
        }
        // great-circle distance is at least R·|Δlat|
        let dlat = ang.to_degrees() * (1.0 + 1e-9);
        let max_abs_lat = at.lat.abs() + dlat;
        if max_abs_lat >= 89.0 {
            return None;
        }
        // and at least 2R·asin(cos(maxlat)·sin(Δlon/2))
        let s = (ang / 2.0).sin() / max_abs_lat.to_radians().cos();
        if s >= 1.0 {
            return None;
        }
        let dlon = (2.0 * s.asin()).to_degrees() * (1.0 + 1e-9);
        if at.lon - dlon < -180.0 || at.lon + dlon > 180.0 {
            return None;
        }
        let lo = cell_of(LatLon::new(at.lat - dlat, at.lon - dlon));
        let hi = cell_of(LatLon::new(at.lat + dlat, at.lon + dlon));
        // one extra ring absorbs floor() rounding at cell borders
        Some((lo.0 - 1, hi.0 + 1, lo.1 - 1, hi.1 + 1))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(ANCHORS_HEADER);
        out.push('\n');
        for a in self.anchors.values() {
            write!(
                out,
                "A\t{}\t{}\t{}\t{}\t{}",
                a.id,
                a.kind,
                a.centroid.lat,
                a.centroid.lon,
                a.lane_distribution.len()
            )
            .unwrap();
            for p in &a.lane_distribution {
                write!(out, "\t{p}").unwrap();
            }
            writeln!(out, "\t{}\t{}\t{}", a.feature_mean, a.feature_spread, a.support_count).unwrap();
        }
        for (k, s) in &self.sigma {
            writeln!(out, "S\t{k}\t{s}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == ANCHORS_HEADER => {}
            Some(h) if h.starts_with("#lanequest-anchors") => {
                return Err(Error::Store { index: 0, message: format!("unsupported version {h:?}") })
            }
            _ => return Err(Error::Store { index: 0, message: "missing anchors header".into() }),
        }
        let mut store = AnchorStore::new();
        let mut index = 0usize;
        for line in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            index += 1;
            let bad = |m: String| Error::Store { index, message: m };
            let f: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}"))) };
            match f[0] {
                "A" => {
                    if f.len() < 6 {
                        return Err(bad("truncated anchor record".into()));
                    }
                    let n: usize = f[5].parse().map_err(|_| bad(format!("bad lane count {:?}", f[5])))?;
                    if f.len() != 9 + n {
                        return Err(bad(format!("expected {} fields, got {}", 9 + n, f.len())));
                    }
                    let anchor = Anchor {
                        id: f[1].to_string(),
                        kind: f[2].parse().map_err(|e: Error| bad(e.to_string()))?,
                        centroid: LatLon::new(num(f[3])?, num(f[4])?),
                        lane_distribution: f[6..6 + n].iter().map(|s| num(s)).collect::<Result<_>>()?,
                        feature_mean: num(f[6 + n])?,
                        feature_spread: num(f[7 + n])?,
                        support_count: f[8 + n].parse().map_err(|_| bad("bad support count".into()))?,
                    };
                    store.insert(anchor).map_err(|e| bad(e.to_string()))?;
                }
                "S" if f.len() == 3 => {
                    let kind: AnchorKind = f[1].parse().map_err(|e: Error| bad(e.to_string()))?;
                    store.set_sigma(kind, num(f[2])?);
                }
                other => return Err(bad(format!("unknown record {other:?}"))),
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
