//! Event detectors over car-frame sensor streams.
//!
//! Sign conventions: x points to the left side of the car and carries the
//! felt (inertial) lateral acceleration, so a right turn reads positive x;
//! gyro z is counter-clockwise positive; yaw is a clockwise compass heading.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{AnchorObservation, MotionEvent, MotionKind, ObservationKind};
use crate::geo::centroid;
use crate::preprocess::{local_linear_fit, position_at, SnappedFix, TimeSeries};
use crate::trace::{LocationFix, RoadMap, SensorSample, SpecialKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub lane_change_window_s: f64,
    /// m/s²
    pub lane_change_threshold: f64,
    pub peak_proximity_s: f64,
    /// Minimum extremum prominence, m/s².
    pub peak_prominence: f64,
    pub stop_minutes: f64,
    /// m/s
    pub stop_speed: f64,
    /// Half-width of the along-track regression used for speed, seconds.
    pub speed_half_window_s: f64,
    pub turn_angle_deg: f64,
    pub turn_tolerance_deg: f64,
    pub uturn_angle_deg: f64,
    pub uturn_tolerance_deg: f64,
    pub yaw_rate_window_s: f64,
    /// rad/s
    pub omega_min: f64,
    pub curve_min_s: f64,
    pub curve_min_yaw_deg: f64,
    /// Fraction of a curve interval dropped at each end before averaging.
    pub curve_trim: f64,
    pub tunnel_window_s: f64,
    pub anomaly_window_s: f64,
    pub anomaly_merge_s: f64,
    /// Shortest surface-anomaly excursion kept, seconds.
    pub anomaly_min_s: f64,
    /// (m/s²)²; derived from the trace when unset.
    pub anomaly_var_threshold: Option<f64>,
    /// µT²; derived from the trace when unset.
    pub tunnel_var_threshold: Option<f64>,
    /// Auto thresholds are this multiple of the quietest-decile variance.
    pub auto_threshold_factor: f64,
    /// Distance past a special-lane marker within which leaving the road
    /// (or, before it, joining the road) counts as taking the lane.
    pub special_lane_range_m: f64,
    /// Half-width of the fix regression used to geotag events, seconds.
    pub locate_half_window_s: f64,
    pub smoothing_window_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            lane_change_window_s: 7.0,
            lane_change_threshold: 0.8,
            peak_proximity_s: 4.0,
            peak_prominence: 0.3,
            stop_minutes: 3.0,
            stop_speed: 0.5,
            speed_half_window_s: 15.0,
            turn_angle_deg: 90.0,
            turn_tolerance_deg: 30.0,
            uturn_angle_deg: 180.0,
            uturn_tolerance_deg: 30.0,
            yaw_rate_window_s: 2.0,
            omega_min: 0.02,
            curve_min_s: 3.0,
            curve_min_yaw_deg: 15.0,
            curve_trim: 0.15,
            tunnel_window_s: 5.0,
            anomaly_window_s: 1.0,
            anomaly_merge_s: 2.0,
            anomaly_min_s: 0.25,
            anomaly_var_threshold: None,
            tunnel_var_threshold: None,
            auto_threshold_factor: 3.0,
            special_lane_range_m: 300.0,
            locate_half_window_s: 5.0,
            smoothing_window_s: crate::preprocess::DEFAULT_SMOOTHING_WINDOW_S,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lane_change_window_s", self.lane_change_window_s),
            ("lane_change_threshold", self.lane_change_threshold),
            ("peak_proximity_s", self.peak_proximity_s),
            ("stop_minutes", self.stop_minutes),
            ("stop_speed", self.stop_speed),
            ("speed_half_window_s", self.speed_half_window_s),
            ("turn_angle_deg", self.turn_angle_deg),
            ("turn_tolerance_deg", self.turn_tolerance_deg),
            ("uturn_angle_deg", self.uturn_angle_deg),
            ("uturn_tolerance_deg", self.uturn_tolerance_deg),
            ("yaw_rate_window_s", self.yaw_rate_window_s),
            ("omega_min", self.omega_min),
            ("curve_min_s", self.curve_min_s),
            ("tunnel_window_s", self.tunnel_window_s),
            ("anomaly_window_s", self.anomaly_window_s),
            ("anomaly_merge_s", self.anomaly_merge_s),
            ("auto_threshold_factor", self.auto_threshold_factor),
            ("special_lane_range_m", self.special_lane_range_m),
            ("locate_half_window_s", self.locate_half_window_s),
            ("smoothing_window_s", self.smoothing_window_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("anomaly_var_threshold", self.anomaly_var_threshold),
            ("tunnel_var_threshold", self.tunnel_var_threshold),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if !(self.anomaly_min_s >= 0.0) {
            return Err(Error::Config(format!("anomaly_min_s must be non-negative, got {}", self.anomaly_min_s)));
        }
        if !(self.peak_prominence >= 0.0) || !(0.0..0.5).contains(&self.curve_trim) || !(self.curve_min_yaw_deg >= 0.0) {
            return Err(Error::Config("peak prominence, curve trim or curve yaw out of range".into()));
        }
        if self.turn_angle_deg + self.turn_tolerance_deg >= self.uturn_angle_deg - self.uturn_tolerance_deg {
            return Err(Error::Config("turn and u-turn yaw bands overlap".into()));
        }
        Ok(())
    }

    fn turn_band(&self) -> (f64, f64) {
        (self.turn_angle_deg - self.turn_tolerance_deg, self.turn_angle_deg + self.turn_tolerance_deg)
    }

    fn uturn_band(&self) -> (f64, f64) {
        (self.uturn_angle_deg - self.uturn_tolerance_deg, self.uturn_angle_deg + self.uturn_tolerance_deg)
    }
}

#[derive(Debug, Clone, Copy)]
struct Extremum {
    i: usize,
    t: f64,
    v: f64,
    is_max: bool,
}

fn extrema(x: &TimeSeries, window_s: f64, min_prominence: f64) -> Vec<Extremum> {
    let (t, v) = (&x.t, &x.v);
    let n = v.len();
    let half = window_s / 2.0;
    let mut out = Vec::new();
    for i in 1..n.saturating_sub(1) {
        let is_max = v[i] > v[i - 1] && v[i] >= v[i + 1];
        let is_min = v[i] < v[i - 1] && v[i] <= v[i + 1];
        if !is_max && !is_min {
            continue;
        }
        // signed so that the extremum is a maximum of s·v
        let s = if is_max { 1.0 } else { -1.0 };
        let vi = s * v[i];
        let mut left = vi;
        let mut j = i;
        while j > 0 && t[j - 1] >= t[i] - half && s * v[j - 1] <= vi {
            j -= 1;
            left = left.min(s * v[j]);
        }
        let mut right = vi;
        let mut j = i;
        while j + 1 < n && t[j + 1] <= t[i] + half && s * v[j + 1] <= vi {
            j += 1;
            right = right.min(s * v[j]);
        }
        if vi - left.max(right) >= min_prominence {
            out.push(Extremum { i, t: t[i], v: v[i], is_max });
        }
    }
    out
}

/// Lane changes from the smoothed x-acceleration: a maximum and a minimum
/// at most `peak_proximity_s` apart whose difference exceeds the threshold.
/// A trough first is a left change, a peak first a right change. Pairs are
/// taken earliest first and never share samples; an extremum is left
/// unpaired when its partner forms a stronger pair with a later extremum.
pub fn detect_lane_changes(x_accel: &TimeSeries, cfg: &DetectorConfig) -> Vec<MotionEvent> {
    let ext = extrema(x_accel, cfg.lane_change_window_s, cfg.peak_prominence);
    let reach = cfg.peak_proximity_s.min(cfg.lane_change_window_s);
    let mut used = vec![false; ext.len()];
    let best_partner = |a: usize, used: &[bool]| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for b in a + 1..ext.len() {
            if ext[b].t - ext[a].t > reach {
                break;
            }
            if used[b] || ext[b].is_max == ext[a].is_max {
                continue;
            }
            let d = (ext[a].v - ext[b].v).abs();
            if d > cfg.lane_change_threshold && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((b, d));
            }
        }
        best
    };
    let mut out = Vec::new();
    for a in 0..ext.len() {
        if used[a] {
            continue;
        }
        let Some((b, d)) = best_partner(a, &used) else {
            continue;
        };
        if best_partner(b, &used).is_some_and(|(_, d2)| d2 > d) {
            continue;
        }
        for u in used.iter_mut().take(b + 1).skip(a) {
            *u = true;
        }
        let (first, second) = (ext[a], ext[b]);
        debug_assert!(first.i < second.i);
        out.push(MotionEvent {
            t: 0.5 * (first.t + second.t),
            kind: if first.is_max { MotionKind::Right } else { MotionKind::Left },
            peak_delta: d,
            location: None,
        });
    }
    out
}

/// `r = a / ω²`.
pub fn estimate_curve_radius(centripetal_accel: f64, angular_velocity: f64, omega_min: f64) -> Result<f64> {
    if !(angular_velocity.abs() > omega_min) {
        return Err(Error::NotACurve {
            omega: angular_velocity,
            min: omega_min,
        });
    }
    Ok(centripetal_accel.abs() / (angular_velocity * angular_velocity))
}

/// Radius over `[t0, t1]` from window-averaged |x-accel| and |z-gyro|.
pub fn interval_radius(x_accel: &TimeSeries, gyro_z: &TimeSeries, t0: f64, t1: f64, omega_min: f64) -> Result<f64> {
    let mean_abs = |s: &TimeSeries| {
        let lo = s.t.partition_point(|&t| t < t0);
        let hi = s.t.partition_point(|&t| t <= t1);
        if hi <= lo {
            return 0.0;
        }
        s.v[lo..hi].iter().map(|x| x.abs()).sum::<f64>() / (hi - lo) as f64
    };
    estimate_curve_radius(mean_abs(x_accel), mean_abs(gyro_z), omega_min)
}

/// A turning maneuver found in the heading stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maneuver {
    pub kind: ObservationKind,
    pub start: f64,
    pub end: f64,
    /// Net heading change, degrees, clockwise positive.
    pub net_yaw_deg: f64,
}

impl Maneuver {
    pub fn mid(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Compass headings unwrapped into a continuous series (degrees).
pub fn unwrap_yaw(samples: &[SensorSample]) -> TimeSeries {
    let mut v = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    let mut prev: Option<f64> = None;
    for s in samples {
        if let Some(p) = prev {
            let mut d = s.yaw - p;
            d -= 360.0 * (d / 360.0).round();
            acc += d;
        } else {
            acc = s.yaw;
        }
        prev = Some(s.yaw);
        v.push(acc);
    }
    TimeSeries::new(samples.iter().map(|s| s.t).collect(), v)
}

/// Same-sign runs of a rate series exceeding `min_rate` in magnitude.
fn rate_runs(t: &[f64], rate: &[f64], min_rate: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start: Option<(usize, f64)> = None;
    for i in 0..rate.len() {
        let s = if rate[i] > min_rate {
            1.0
        } else if rate[i] < -min_rate {
            -1.0
        } else {
            0.0
        };
        match start {
            Some((st, sign)) if sign != s => {
                runs.push((st, i - 1));
                start = if s != 0.0 { Some((i, s)) } else { None };
            }
            None if s != 0.0 => start = Some((i, s)),
            _ => {}
        }
    }
    if let Some((st, _)) = start {
        runs.push((st, rate.len() - 1));
    }
    runs.retain(|&(a, b)| t[b] > t[a]);
    runs
}

/// Turns and u-turns: sustained same-sign heading-rate runs whose net
/// heading change falls in the turn or u-turn band.
pub fn detect_turns(samples: &[SensorSample], cfg: &DetectorConfig) -> Vec<Maneuver> {
    if samples.len() < 3 {
        return Vec::new();
    }
    let yaw = unwrap_yaw(samples);
    let rate: Vec<f64> = local_linear_fit(&yaw, cfg.yaw_rate_window_s).into_iter().map(|(_, s)| s).collect();
    let (tb, ub) = (cfg.turn_band(), cfg.uturn_band());
    rate_runs(&yaw.t, &rate, cfg.omega_min.to_degrees())
        .into_iter()
        .filter_map(|(a, b)| {
            let net = yaw.v[b] - yaw.v[a];
            let mag = net.abs();
            let kind = if mag >= ub.0 && mag <= ub.1 {
                ObservationKind::UTurn
            } else if mag >= tb.0 && mag <= tb.1 {
                if net > 0.0 {
                    ObservationKind::TurnRight
                } else {
                    ObservationKind::TurnLeft
                }
            } else {
                return None;
            };
            Some(Maneuver {
                kind,
                start: yaw.t[a],
                end: yaw.t[b],
                net_yaw_deg: net,
            })
        })
        .collect()
}

/// A curve interval with its estimated radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSpan {
    pub start: f64,
    pub end: f64,
    pub radius_m: f64,
    pub net_yaw_deg: f64,
}

/// Curves: runs of same-sign z-gyro above `omega_min` lasting at least
/// `curve_min_s` whose net heading change lies between `curve_min_yaw_deg`
/// and the lower edge of the turn band. Expects smoothed series.
pub fn detect_curves(x_accel: &TimeSeries, gyro_z: &TimeSeries, cfg: &DetectorConfig) -> Vec<CurveSpan> {
    let (t, w) = (&gyro_z.t, &gyro_z.v);
    let max_yaw = cfg.turn_band().0;
    let mut out = Vec::new();
    for (a, b) in rate_runs(t, w, cfg.omega_min) {
        if t[b] - t[a] < cfg.curve_min_s {
            continue;
        }
        let mut net = 0.0;
        for k in a + 1..=b {
            net += 0.5 * (w[k] + w[k - 1]) * (t[k] - t[k - 1]);
        }
        let net_deg = -net.to_degrees();
        if net_deg.abs() < cfg.curve_min_yaw_deg || net_deg.abs() >= max_yaw {
            continue;
        }
        let trim = cfg.curve_trim * (t[b] - t[a]);
        let (t0, t1) = (t[a] + trim, t[b] - trim);
        if let Ok(r) = interval_radius(x_accel, gyro_z, t0, t1, cfg.omega_min) {
            out.push(CurveSpan {
                start: t[a],
                end: t[b],
                radius_m: r,
                net_yaw_deg: net_deg,
            });
        }
    }
    out
}

/// Variance of the samples within `±window/2` of every timestamp.
pub fn rolling_variance(series: &TimeSeries, window_s: f64) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let shift = series.v.iter().sum::<f64>() / n as f64;
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, &x) in series.v.iter().enumerate() {
        let d = x - shift;
        s1[i + 1] = s1[i] + d;
        s2[i + 1] = s2[i] + d * d;
    }
    let h = window_s / 2.0;
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let ti = series.t[i];
        while series.t[lo] < ti - h {
            lo += 1;
        }
        while hi < n && series.t[hi] <= ti + h {
            hi += 1;
        }
        let m = (hi - lo) as f64;
        if m < 2.0 {
            out.push(0.0);
            continue;
        }
        let mean = (s1[hi] - s1[lo]) / m;
        let var = (s2[hi] - s2[lo]) / m - mean * mean;
        out.push(var.max(0.0));
    }
    out
}

/// `factor ×` the mean of the quietest decile of window variances.
pub fn auto_threshold(variances: &[f64], factor: f64) -> f64 {
    if variances.is_empty() {
        return f64::INFINITY;
    }
    let mut v = variances.to_vec();
    v.sort_by(f64::total_cmp);
    let k = (v.len() / 10).max(1);
    let base = v[..k].iter().sum::<f64>() / k as f64;
    (factor * base).max(1e-9)
}

/// Interval where the window variance stays above a threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Excursion {
    pub start: f64,
    pub end: f64,
    pub peak_t: f64,
    pub peak_variance: f64,
    /// Variance of the raw signal over the excursion shrunk by half a
    /// window at each end; the peak when that leaves less than a window.
    pub plateau_variance: f64,
}

fn excursions(t: &[f64], var: &[f64], threshold: f64, merge_gap_s: f64) -> Vec<Excursion> {
    let mut out: Vec<Excursion> = Vec::new();
    let mut i = 0;
    while i < var.len() {
        if var[i] <= threshold {
            i += 1;
            continue;
        }
        let a = i;
        let mut peak = i;
        while i < var.len() && var[i] > threshold {
            if var[i] > var[peak] {
                peak = i;
            }
            i += 1;
        }
        let e = Excursion {
            start: t[a],
            end: t[i - 1],
            peak_t: t[peak],
            peak_variance: var[peak],
            plateau_variance: var[peak],
        };
        match out.last_mut() {
            Some(prev) if e.start - prev.end < merge_gap_s => {
                prev.end = e.end;
                if e.peak_variance > prev.peak_variance {
                    prev.peak_t = e.peak_t;
                    prev.peak_variance = e.peak_variance;
                }
            }
            _ => out.push(e),
        }
    }
    out
}

fn span_variance(series: &TimeSeries, a: f64, b: f64) -> Option<f64> {
    let lo = series.t.partition_point(|&t| t < a);
    let hi = series.t.partition_point(|&t| t <= b);
    let v = &series.v[lo..hi];
    if v.len() < 2 {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Some(v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64)
}

/// Tunnel lane feature: excursions of the 5 s x-magnetometer variance.
pub fn detect_tunnel_feature(mag_x: &TimeSeries, cfg: &DetectorConfig) -> Vec<Excursion> {
    let w = cfg.tunnel_window_s;
    let var = rolling_variance(mag_x, w);
    let thr = cfg
        .tunnel_var_threshold
        .unwrap_or_else(|| auto_threshold(&var, cfg.auto_threshold_factor));
    let mut out = excursions(&mag_x.t, &var, thr, 0.0);
    for x in &mut out {
        let (a, b) = (x.start + w / 2.0, x.end - w / 2.0);
        if b - a >= w {
            if let Some(v) = span_variance(mag_x, a, b) {
                x.plateau_variance = v;
            }
        }
    }
    out
}

/// Potholes and bumps: excursions of the short-window z-acceleration
/// variance, merging excursions closer than `anomaly_merge_s`.
pub fn detect_surface_anomaly(z_accel: &TimeSeries, cfg: &DetectorConfig) -> Vec<Excursion> {
    let var = rolling_variance(z_accel, cfg.anomaly_window_s);
    let thr = cfg
        .anomaly_var_threshold
        .unwrap_or_else(|| auto_threshold(&var, cfg.auto_threshold_factor));
    let mut out = excursions(&z_accel.t, &var, thr, cfg.anomaly_merge_s);
    out.retain(|x| x.end - x.start >= cfg.anomaly_min_s);
    out
}

/// Along-track speed at every snapped fix: least-squares slope of the
/// along-segment position over `±half_window_s` on the same segment.
pub fn along_track_speed(snapped: &[SnappedFix], half_window_s: f64) -> Vec<f64> {
    (0..snapped.len())
        .map(|i| {
            let ti = snapped[i].original.t;
            let seg = &snapped[i].segment;
            let mut lo = i;
            while lo > 0 && snapped[lo - 1].original.t >= ti - half_window_s && &snapped[lo - 1].segment == seg {
                lo -= 1;
            }
            let mut hi = i;
            while hi + 1 < snapped.len()
                && snapped[hi + 1].original.t <= ti + half_window_s
                && &snapped[hi + 1].segment == seg
            {
                hi += 1;
            }
            let win = &snapped[lo..=hi];
            let m = win.len() as f64;
            if win.len() < 2 {
                return f64::INFINITY;
            }
            let tm = win.iter().map(|s| s.original.t).sum::<f64>() / m;
            let am = win.iter().map(|s| s.along_m).sum::<f64>() / m;
            let stt: f64 = win.iter().map(|s| (s.original.t - tm).powi(2)).sum();
            let sta: f64 = win.iter().map(|s| (s.original.t - tm) * (s.along_m - am)).sum();
            (sta / stt).abs()
        })
        .collect()
}

/// A stationary period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopSpan {
    pub start: f64,
    pub end: f64,
    pub location: crate::geo::LatLon,
}

/// Stops longer than `stop_minutes`. Slow runs found from the regression
/// speed are widened to the fixes that stay near the stop position, which
/// undoes the shrinkage caused by the regression window.
pub fn detect_stops(snapped: &[SnappedFix], cfg: &DetectorConfig) -> Vec<StopSpan> {
    let speed = along_track_speed(snapped, cfg.speed_half_window_s);
    let mut out = Vec::new();
    let mut i = 0;
    while i < snapped.len() {
        if speed[i] >= cfg.stop_speed {
            i += 1;
            continue;
        }
        let a = i;
        while i < snapped.len() && speed[i] < cfg.stop_speed && snapped[i].segment == snapped[a].segment {
            i += 1;
        }
        let b = i - 1;
        let core = &snapped[a..=b];
        let center = core.iter().map(|s| s.along_m).sum::<f64>() / core.len() as f64;
        let tol = 3.0 * core.iter().map(|s| s.original.accuracy).fold(0.0, f64::max).max(3.0);
        let near = |s: &SnappedFix| s.segment == snapped[a].segment && (s.along_m - center).abs() <= tol;
        let mut lo = a;
        while lo > 0 && near(&snapped[lo - 1]) {
            lo -= 1;
        }
        let mut hi = b;
        while hi + 1 < snapped.len() && near(&snapped[hi + 1]) {
            hi += 1;
        }
        let (start, end) = (snapped[lo].original.t, snapped[hi].original.t);
        if end - start > cfg.stop_minutes * 60.0 {
            let location = centroid(core.iter().map(|s| s.original.position())).expect("non-empty stop");
            out.push(StopSpan { start, end, location });
        }
        i = i.max(hi + 1);
    }
    out
}

/// Crossing of a merge or exit marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecialLanePass {
    pub t: f64,
    pub kind: ObservationKind,
}

/// Merge and exit markers passed by the snapped path. An exit is taken when
/// the car leaves the segment (or the trace ends) within
/// `special_lane_range_m` after the marker; a merge is taken when the car
/// joined the segment within that range before the marker.
pub fn detect_special_lanes(snapped: &[SnappedFix], map: &RoadMap, cfg: &DetectorConfig) -> Vec<SpecialLanePass> {
    let mut out = Vec::new();
    let mut a = 0;
    while a < snapped.len() {
        // one contiguous visit of a segment
        let mut b = a;
        while b + 1 < snapped.len() && snapped[b + 1].segment == snapped[a].segment {
            b += 1;
        }
        let visit = &snapped[a..=b];
        if let Some(seg) = map.get(&snapped[a].segment) {
            let first_along = visit[0].along_m;
            let last_along = visit[visit.len() - 1].along_m;
            for sl in &seg.special_lanes {
                let Some(k) = (1..visit.len())
                    .find(|&k| visit[k - 1].along_m < sl.position_m && visit[k].along_m >= sl.position_m)
                else {
                    continue;
                };
                let (p, q) = (&visit[k - 1], &visit[k]);
                let w = (sl.position_m - p.along_m) / (q.along_m - p.along_m);
                let t = p.original.t + w * (q.original.t - p.original.t);
                let kind = match sl.kind {
                    SpecialKind::Exit => ObservationKind::Exit {
                        side: sl.side,
                        taken: last_along - sl.position_m <= cfg.special_lane_range_m,
                    },
                    SpecialKind::Merge => ObservationKind::Merge {
                        side: sl.side,
                        taken: sl.position_m - first_along <= cfg.special_lane_range_m,
                    },
                };
                out.push(SpecialLanePass { t, kind });
            }
        }
        a = b + 1;
    }
    out.sort_by(|x, y| x.t.total_cmp(&y.t));
    out
}

/// Bootstrap anchor observations: turns, u-turns, long stops and merge/exit
/// passes, each geotagged at the maneuver midpoint.
pub fn classify_bootstrap(
    samples: &[SensorSample],
    fixes: &[LocationFix],
    snapped: &[SnappedFix],
    map: &RoadMap,
    cfg: &DetectorConfig,
) -> Vec<AnchorObservation> {
    let mut out = Vec::new();
    let locate = |t: f64| position_at(fixes, t, cfg.locate_half_window_s);
    for m in detect_turns(samples, cfg) {
        if let Some(loc) = locate(m.mid()) {
            let mut o = AnchorObservation::new(m.mid(), m.kind, loc);
            o.span = Some((m.start, m.end));
            out.push(o);
        }
    }
    for s in detect_stops(snapped, cfg) {
        let mut o = AnchorObservation::new(0.5 * (s.start + s.end), ObservationKind::Stop, s.location);
        o.span = Some((s.start, s.end));
        out.push(o);
    }
    for p in detect_special_lanes(snapped, map, cfg) {
        if let Some(loc) = locate(p.t) {
            out.push(AnchorObservation::new(p.t, p.kind, loc));
        }
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(f64) -> f64, dur: f64) -> TimeSeries {
        let t: Vec<f64> = (0..=(dur * 50.0) as usize).map(|i| i as f64 / 50.0).collect();
        let v = t.iter().map(|&x| f(x)).collect();
        TimeSeries::new(t, v)
    }

    fn bump(t: f64, at: f64, amp: f64) -> f64 {
        amp * (-(t - at).powi(2) / (2.0 * 0.4f64.powi(2))).exp()
    }

    #[test]
    fn quiet_input_has_no_lane_changes() {
        assert!(detect_lane_changes(&series(|_| 0.0, 60.0), &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn trough_then_peak_is_a_left_change() {
        let x = series(|t| bump(t, 12.0, 1.0) - bump(t, 10.0, 1.0), 30.0);
        let ev = detect_lane_changes(&x, &DetectorConfig::default());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, MotionKind::Left);
        assert!((ev[0].t - 11.0).abs() < 0.05);
        assert!((ev[0].peak_delta - 2.0).abs() < 0.01);
    }

    #[test]
    fn distant_peaks_do_not_pair() {
        let x = series(|t| bump(t, 16.0, 1.0) - bump(t, 10.0, 1.0), 30.0);
        assert!(detect_lane_changes(&x, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn radius_arithmetic() {
        assert_eq!(estimate_curve_radius(1.0, 1.0, 0.02).unwrap(), 1.0);
        assert!((estimate_curve_radius(4.0, 0.2, 0.02).unwrap() - 100.0).abs() < 1e-9);
        assert!(matches!(estimate_curve_radius(1.0, 0.01, 0.02), Err(Error::NotACurve { .. })));
    }

    #[test]
    fn yaw_unwraps_across_north() {
        let samples: Vec<SensorSample> = [350.0, 355.0, 2.0, 10.0]
            .iter()
            .enumerate()
            .map(|(i, &y)| SensorSample { t: i as f64, yaw: y, ..Default::default() })
            .collect();
        assert_eq!(unwrap_yaw(&samples).v, vec![350.0, 355.0, 362.0, 370.0]);
    }

    #[test]
    fn uturn_from_heading_ramp() {
        let samples: Vec<SensorSample> = (0..=1500)
            .map(|i| {
                let t = i as f64 / 50.0;
                let frac = ((t - 9.0) / 12.0).clamp(0.0, 1.0);
                SensorSample { t, yaw: 178.0 * frac, ..Default::default() }
            })
            .collect();
        let m = detect_turns(&samples, &DetectorConfig::default());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].kind, ObservationKind::UTurn);
    }

    #[test]
    fn constant_field_has_no_tunnel() {
        assert!(detect_tunnel_feature(&series(|_| 20.0, 60.0), &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn overlapping_bands_are_rejected() {
        let cfg = DetectorConfig {
            turn_tolerance_deg: 70.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        DetectorConfig::default().validate().unwrap();
    }
}
