//! Lateral tracking error on the nominal route and on a deformed band.

use thiserror::Error;

use crate::band::ElasticBand;
use crate::geometry::{normalize_angle, LocalPoint, LEFT_POSITIVE};
use crate::path::{eval_path, PathError, RoutePath};

/// Steering preview distance for the sedan platform, meters.
pub const PREVIEW_FUSION: f64 = 3.0;
/// Steering preview distance for the low-speed shuttle, meters.
pub const PREVIEW_DASH: f64 = 1.5;
/// Heading errors beyond this magnitude saturate the preview term.
pub const HEADING_GUARD: f64 = 1.4;

const COARSE_SAMPLES: usize = 64;
const NEWTON_STEPS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("EmptyPath: the route has no segments")]
    EmptyPath,
    #[error("DegenerateBandSegment: band nodes coincide")]
    DegenerateBandSegment,
    #[error("BandTooShort: band has {0} nodes, need at least 2")]
    BandTooShort(usize),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Measured vehicle pose; heading is counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl PoseEstimate {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi: normalize_angle(psi),
        }
    }

    pub fn position(&self) -> LocalPoint {
        LocalPoint::new(self.x, self.y)
    }
}

/// Closest route point to a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootPoint {
    pub segment: usize,
    pub lambda: f64,
    /// Signed lateral deviation, positive when the pose is left of the route.
    pub h: f64,
}

/// Complete error record for the steering controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    pub h: f64,
    pub heading_error: f64,
    pub y: f64,
    pub segment: usize,
    pub lambda: f64,
    pub saturated: bool,
}

/// Preview error and whether the heading guard engaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreviewError {
    pub y: f64,
    pub saturated: bool,
}

fn refine(seg: &crate::path::PathSegment, target: LocalPoint, mut lambda: f64) -> f64 {
    for _ in 0..NEWTON_STEPS {
        let off = seg.position(lambda) - target;
        let d1 = seg.derivative(lambda);
        let d2 = seg.second_derivative(lambda);
        let f = off.dot(d1);
        let df = d1.norm_squared() + off.dot(d2);
        if df.abs() < 1e-15 {
            break;
        }
        let next = (lambda - f / df).clamp(0.0, 1.0);
        if (next - lambda).abs() < 1e-14 {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

/// Foot point of `pose` on `path`.
///
/// Every candidate segment is sampled on a coarse grid, then the best few
/// samples are polished with Newton steps. A `hint` restricts the search to
/// the hinted segment and its neighbours.
pub fn nearest_on_path(
    path: &RoutePath,
    pose: &PoseEstimate,
    hint: Option<(usize, f64)>,
) -> Result<FootPoint, TrackError> {
    if path.is_empty() {
        return Err(TrackError::EmptyPath);
    }
    let target = pose.position();
    let range = match hint {
        Some((seg, _)) => {
            let seg = seg.min(path.len() - 1);
            seg.saturating_sub(1)..(seg + 2).min(path.len())
        }
        None => 0..path.len(),
    };

    // Best coarse sample per segment.
    let mut coarse: Vec<(f64, usize, f64)> = range
        .map(|i| {
            let seg = &path.segments[i];
            let mut best = (f64::INFINITY, i, 0.0);
            for k in 0..COARSE_SAMPLES {
                let l = k as f64 / (COARSE_SAMPLES - 1) as f64;
                let d = seg.position(l).distance(target);
                if d < best.0 {
                    best = (d, i, l);
                }
            }
            best
        })
        .collect();
    coarse.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best: Option<(f64, usize, f64)> = None;
    for &(_, i, l0) in coarse.iter().take(3) {
        let seg = &path.segments[i];
        let l = refine(seg, target, l0);
        let d = seg.position(l).distance(target);
        if best.map_or(true, |b| d < b.0) {
            best = Some((d, i, l));
        }
    }
    let (dist, segment, lambda) = best.ok_or(TrackError::EmptyPath)?;
    let seg = &path.segments[segment];
    let tangent = seg.derivative(lambda);
    let offset = target - seg.position(lambda);
    let side = LEFT_POSITIVE * tangent.cross(offset);
    let h = if side >= 0.0 { dist } else { -dist };
    Ok(FootPoint {
        segment,
        lambda,
        h,
    })
}

/// `y = h + l_s·tan(Δψ)`, with the heading guard at [`HEADING_GUARD`].
pub fn preview_error(h: f64, heading_error: f64, preview: f64) -> PreviewError {
    let saturated = heading_error.abs() > HEADING_GUARD;
    let angle = heading_error.clamp(-HEADING_GUARD, HEADING_GUARD);
    PreviewError {
        y: h + preview * angle.tan(),
        saturated,
    }
}

/// Full nominal-path error for a pose.
pub fn tracking_error(
    path: &RoutePath,
    pose: &PoseEstimate,
    preview: f64,
    hint: Option<(usize, f64)>,
) -> Result<TrackingError, TrackError> {
    let foot = nearest_on_path(path, pose, hint)?;
    let sample = eval_path(path, foot.segment, foot.lambda)?;
    let heading_error = normalize_angle(pose.psi - sample.heading);
    let PreviewError { y, saturated } = preview_error(foot.h, heading_error, preview);
    Ok(TrackingError {
        h: foot.h,
        heading_error,
        y,
        segment: foot.segment,
        lambda: foot.lambda,
        saturated,
    })
}

/// Signed distance of `pv` from the line through `p1 → p2`.
///
/// `det([a; b]) / ‖a‖` with `a = p2 − p1` and `b = pv − p1`; positive when
/// `pv` is left of the directed segment.
pub fn band_lateral_error(p1: LocalPoint, p2: LocalPoint, pv: LocalPoint) -> Result<f64, TrackError> {
    let a = p2 - p1;
    let b = pv - p1;
    let len = a.norm();
    if len < 1e-9 {
        return Err(TrackError::DegenerateBandSegment);
    }
    Ok(LEFT_POSITIVE * a.cross(b) / len)
}

/// Index `k` such that `(k, k + 1)` are the band nodes bracketing `point`.
pub fn nearest_band_segment(nodes: &[LocalPoint], point: LocalPoint) -> Result<usize, TrackError> {
    let n = nodes.len();
    if n < 2 {
        return Err(TrackError::BandTooShort(n));
    }
    let mut k = 0;
    let mut best = f64::INFINITY;
    for (i, p) in nodes.iter().enumerate() {
        let d = p.distance_sq(point);
        if d < best {
            best = d;
            k = i;
        }
    }
    if k == 0 {
        return Ok(0);
    }
    if k == n - 1 {
        return Ok(n - 2);
    }
    let forward = (point - nodes[k]).dot(nodes[k + 1] - nodes[k]);
    Ok(if forward >= 0.0 { k } else { k - 1 })
}

/// The two consecutive deformed nodes closest to the vehicle, in travel order.
pub fn nearest_band_nodes(
    band: &ElasticBand,
    pose: &PoseEstimate,
) -> Result<(LocalPoint, LocalPoint), TrackError> {
    let nodes = band.positions();
    let k = nearest_band_segment(&nodes, pose.position())?;
    Ok((nodes[k], nodes[k + 1]))
}

/// Band-relative error: lateral offset from the nearest band leg plus the
/// heading-preview term relative to that leg's direction.
pub fn band_tracking_error(
    band: &ElasticBand,
    pose: &PoseEstimate,
    preview: f64,
) -> Result<TrackingError, TrackError> {
    let nodes = band.positions();
    let k = nearest_band_segment(&nodes, pose.position())?;
    let (p1, p2) = (nodes[k], nodes[k + 1]);
    let e_y = band_lateral_error(p1, p2, pose.position())?;
    let heading_error = normalize_angle(pose.psi - (p2 - p1).angle());
    let PreviewError { y, saturated } = preview_error(e_y, heading_error, preview);
    Ok(TrackingError {
        h: e_y,
        heading_error,
        y,
        segment: k,
        lambda: 0.0,
        saturated,
    })
}
