//! Noise reduction, phone-to-car reorientation and snapping fixes to roads.

use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, LatLon, LocalFrame};
use crate::trace::{LocationFix, RoadMap, SegmentId, SensorSample};

pub const DEFAULT_SMOOTHING_WINDOW_S: f64 = 0.5;
pub const DEFAULT_SNAP_RADIUS_M: f64 = 50.0;

/// Scalar samples at increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl TimeSeries {
    pub fn new(t: Vec<f64>, v: Vec<f64>) -> Self {
        assert_eq!(t.len(), v.len(), "time series needs one value per timestamp");
        Self { t, v }
    }

    pub fn from_samples(samples: &[SensorSample], f: impl Fn(&SensorSample) -> f64) -> Self {
        Self {
            t: samples.iter().map(|s| s.t).collect(),
            v: samples.iter().map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            t: self.t.clone(),
            v: self.v.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Linear interpolation, clamped at the ends.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let i = self.t.partition_point(|&x| x <= t);
        if i == 0 {
            return Some(self.v[0]);
        }
        if i == self.len() {
            return Some(self.v[i - 1]);
        }
        let (t0, t1) = (self.t[i - 1], self.t[i]);
        let w = (t - t0) / (t1 - t0);
        Some(self.v[i - 1] + w * (self.v[i] - self.v[i - 1]))
    }
}

#[inline]
fn tricube(u: f64) -> f64 {
    let a = 1.0 - u.abs().powi(3);
    if a <= 0.0 {
        0.0
    } else {
        a * a * a
    }
}

/// Local linear regression at every timestamp. Returns `(value, slope)`
/// pairs; each fit uses tricube weights over `±window/2`.
pub fn local_linear_fit(series: &TimeSeries, window_s: f64) -> Vec<(f64, f64)> {
    assert!(window_s > 0.0, "smoothing window must be positive");
    let h = window_s / 2.0;
    let (t, v) = (&series.t, &series.v);
    let n = t.len();
    let mut out = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        let ti = t[i];
        while t[lo] < ti - h {
            lo += 1;
        }
        while hi < n && t[hi] <= ti + h {
            hi += 1;
        }
        let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in lo..hi {
            let w = tricube((t[j] - ti) / h);
            if w <= 0.0 {
                continue;
            }
            let x = t[j] - ti;
            sw += w;
            swx += w * x;
            swy += w * v[j];
            swxx += w * x * x;
            swxy += w * x * v[j];
            vmin = vmin.min(v[j]);
            vmax = vmax.max(v[j]);
        }
        let denom = sw * swxx - swx * swx;
        if sw <= 0.0 || denom <= 1e-12 * sw * sw * h * h {
            out.push((v[i], 0.0));
            continue;
        }
        let slope = (sw * swxy - swx * swy) / denom;
        let value = (swy - slope * swx) / sw;
        out.push((value.clamp(vmin, vmax), slope));
    }
    out
}

/// Local weighted (tricube) linear regression smoother.
///
/// Reproduces constants and straight lines exactly. The fitted value is
/// clamped to the range of the values inside its window, so monotone inputs
/// never overshoot at the series ends.
pub fn lowpass_smooth(series: &TimeSeries, window_s: f64) -> TimeSeries {
    let fit = local_linear_fit(series, window_s);
    TimeSeries {
        t: series.t.clone(),
        v: fit.into_iter().map(|(v, _)| v).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReorientConfig {
    pub stationary_gyro: f64,
    pub stationary_min_s: f64,
    pub burst_accel: f64,
    pub burst_min_s: f64,
    /// Largest accelerometer deviation (m/s²) still counted as stationary.
    pub stationary_accel_tol: f64,
}

impl Default for ReorientConfig {
    fn default() -> Self {
        Self {
            stationary_gyro: 0.02,
            stationary_min_s: 2.0,
            burst_accel: 1.5,
            burst_min_s: 1.0,
            stationary_accel_tol: 1.0,
        }
    }
}

/// Rotation taking phone-frame vectors into the car frame.
pub fn estimate_car_rotation(samples: &[SensorSample], cfg: &ReorientConfig) -> Result<Rotation3<f64>> {
    let norm = |v: [f64; 3]| Vector3::from(v).norm();
    // first stationary window: quiet gyro and steady accelerometer
    let quiet = |s: &SensorSample, anchor: &SensorSample| {
        norm(s.gyro) < cfg.stationary_gyro
            && (Vector3::from(s.accel) - Vector3::from(anchor.accel)).norm() < cfg.stationary_accel_tol
    };
    let mut start: Option<usize> = None;
    let mut window = None;
    for (i, s) in samples.iter().enumerate() {
        let st = *start.get_or_insert(i);
        if !quiet(s, &samples[st]) {
            start = if norm(s.gyro) < cfg.stationary_gyro { Some(i) } else { None };
            continue;
        }
        if s.t - samples[st].t >= cfg.stationary_min_s {
            let mut end = i;
            while end + 1 < samples.len() && quiet(&samples[end + 1], &samples[st]) {
                end += 1;
            }
            window = Some((st, end));
            break;
        }
    }
    let (ws, we) = window.ok_or_else(|| {
        Error::Reorientation(
            "no stationary window to estimate gravity; pass car-frame samples directly".into(),
        )
    })?;
    let mut g = Vector3::zeros();
    for s in &samples[ws..=we] {
        g += Vector3::from(s.accel);
    }
    g /= (we - ws + 1) as f64;
    if g.norm() < 1e-6 {
        return Err(Error::Reorientation("gravity estimate is zero".into()));
    }
    let z = Vector3::z();
    let axis = g.cross(&z);
    let tilt = if axis.norm() < 1e-15 {
        if g.z > 0.0 {
            Rotation3::identity()
        } else {
            Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
        }
    } else {
        let angle = g.angle(&z);
        Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle)
    };

    // first sustained acceleration burst after the stationary window
    let horiz = |s: &SensorSample| {
        let v = tilt * Vector3::from(s.accel);
        Vector3::new(v.x, v.y, 0.0)
    };
    let mut burst_start: Option<usize> = None;
    let mut burst = None;
    for i in we + 1..samples.len() {
        if horiz(&samples[i]).norm() > cfg.burst_accel {
            let b = *burst_start.get_or_insert(i);
            if samples[i].t - samples[b].t >= cfg.burst_min_s {
                burst = Some((b, i));
                break;
            }
        } else {
            burst_start = None;
        }
    }
    let (bs, be) = burst.ok_or_else(|| {
        Error::Reorientation("no sustained acceleration burst to fix the heading".into())
    })?;
    let mut fwd = Vector3::zeros();
    for s in &samples[bs..=be] {
        fwd += horiz(s);
    }
    // rotate about z so that the burst points along +y
    let heading = fwd.x.atan2(fwd.y);
    let yaw = if heading == 0.0 {
        Rotation3::identity()
    } else {
        Rotation3::from_axis_angle(&Vector3::z_axis(), heading)
    };
    Ok(yaw * tilt)
}

/// Rotates accelerometer, gyroscope and magnetometer vectors into the car
/// frame. The orientation (yaw) channel is passed through unchanged.
pub fn reorient_to_car_frame(samples: &[SensorSample]) -> Result<Vec<SensorSample>> {
    let r = estimate_car_rotation(samples, &ReorientConfig::default())?;
    Ok(apply_rotation(samples, &r))
}

pub fn apply_rotation(samples: &[SensorSample], r: &Rotation3<f64>) -> Vec<SensorSample> {
    let rot = |v: [f64; 3]| -> [f64; 3] { (r * Vector3::from(v)).into() };
    samples
        .iter()
        .map(|s| SensorSample {
            t: s.t,
            accel: rot(s.accel),
            gyro: rot(s.gyro),
            mag: rot(s.mag),
            yaw: s.yaw,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnappedFix {
    pub original: LocationFix,
    pub segment: SegmentId,
    pub lane_count: u32,
    pub along_m: f64,
    /// Signed lateral offset, positive toward the left of the segment's
    /// direction.
    pub cross_m: f64,
}

/// Nearest perpendicular projection onto the road polylines.
pub fn snap_to_segment(fix: &LocationFix, map: &RoadMap, snap_radius_m: f64) -> Result<SnappedFix> {
    if map.segments.is_empty() {
        return Err(Error::InvalidRoad("empty map".into()));
    }
    let p = fix.position();
    let frame = LocalFrame::new(p);
    let mut best: Option<(f64, &SegmentId, SnappedFix)> = None;
    for seg in &map.segments {
        let cum = seg.cumulative_lengths();
        for (k, w) in seg.polyline.windows(2).enumerate() {
            let (ax, ay) = frame.to_xy(w[0]);
            let (bx, by) = frame.to_xy(w[1]);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let u = if len2 > 0.0 {
                ((-ax) * dx + (-ay) * dy) / len2
            } else {
                0.0
            }
            .clamp(0.0, 1.0);
            let (qx, qy) = (ax + u * dx, ay + u * dy);
            let dist = qx.hypot(qy);
            if dist > snap_radius_m {
                continue;
            }
            let proj = frame.to_latlon(qx, qy);
            let along = if u >= 1.0 {
                cum[k + 1]
            } else {
                cum[k] + haversine(w[0], proj)
            };
            // positive when the fix lies left of the edge direction
            let side = dx * (-qy) - dy * (-qx);
            let cross = if side > 0.0 { dist } else { -dist };
            let better = match &best {
                None => true,
                Some((d, id, _)) => dist < *d || (dist == *d && &seg.id < *id),
            };
            if better {
                best = Some((
                    dist,
                    &seg.id,
                    SnappedFix {
                        original: fix.clone(),
                        segment: seg.id.clone(),
                        lane_count: seg.lane_count,
                        along_m: along,
                        cross_m: cross,
                    },
                ));
            }
        }
    }
    best.map(|(_, _, s)| s).ok_or(Error::NoMatch {
        t: fix.t,
        radius_m: snap_radius_m,
    })
}

/// Snaps every fix, silently dropping those with no segment in range.
pub fn snap_all(fixes: &[LocationFix], map: &RoadMap, snap_radius_m: f64) -> Vec<SnappedFix> {
    fixes
        .iter()
        .filter_map(|f| snap_to_segment(f, map, snap_radius_m).ok())
        .collect()
}

/// Position at time `t` from a local linear fit of the fixes within
/// `±half_window_s` (falls back to the nearest fix).
pub fn position_at(fixes: &[LocationFix], t: f64, half_window_s: f64) -> Option<LatLon> {
    if fixes.is_empty() {
        return None;
    }
    let lo = fixes.partition_point(|f| f.t < t - half_window_s);
    let hi = fixes.partition_point(|f| f.t <= t + half_window_s);
    let win = &fixes[lo..hi];
    if win.len() < 2 {
        let i = fixes.partition_point(|f| f.t <= t);
        let near = match i {
            0 => &fixes[0],
            i if i >= fixes.len() => &fixes[fixes.len() - 1],
            i if (fixes[i].t - t).abs() < (t - fixes[i - 1].t).abs() => &fixes[i],
            i => &fixes[i - 1],
        };
        return Some(near.position());
    }
    let frame = LocalFrame::new(win[0].position());
    let m = win.len() as f64;
    let tm = win.iter().map(|f| f.t).sum::<f64>() / m;
    let stt: f64 = win.iter().map(|f| (f.t - tm).powi(2)).sum();
    let fit = |g: &dyn Fn(&LocationFix) -> f64| {
        let mean = win.iter().map(g).sum::<f64>() / m;
        let slope = if stt > 0.0 {
            win.iter().map(|f| (f.t - tm) * (g(f) - mean)).sum::<f64>() / stt
        } else {
            0.0
        };
        mean + slope * (t - tm)
    };
    let x = fit(&|f: &LocationFix| frame.to_xy(f.position()).0);
    let y = fit(&|f: &LocationFix| frame.to_xy(f.position()).1);
    Some(frame.to_latlon(x, y))
}
