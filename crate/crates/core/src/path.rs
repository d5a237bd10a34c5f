//! Route construction: waypoint projection, grouping, and the constrained
//! piecewise-cubic fit.
//!
//! Each segment is a pair of cubics in a shared parameter `λ ∈ [0, 1]`:
//!
//! ```text
//! X(λ) = ax·λ³ + bx·λ² + cx·λ + dx
//! Y(λ) = ay·λ³ + by·λ² + cy·λ + dy
//! ```
//!
//! Adjacent segments meet with matching position and matching first
//! derivative in `λ`. The fit enforces both by elimination: only `(a, b)` of
//! every segment plus `(c, d)` of the first are free, and the remaining
//! coefficients are generated by the joint conditions. Joints therefore hold
//! to the last bit, not just to a tolerance.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::LocalPoint;

/// Equirectangular scale used for degree-to-meter conversion.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Default number of samples per fitted segment.
pub const DEFAULT_POINTS_PER_SEGMENT: usize = 10;

/// Smallest group a cubic can be fitted to.
pub const MIN_GROUP_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("EmptyWaypointSet: no waypoints given")]
    EmptyWaypointSet,
    #[error("InvalidCoordinate: waypoint {index} has lat={lat}, lon={lon}")]
    InvalidCoordinate { index: usize, lat: f64, lon: f64 },
    #[error("SegmentTooSmall: segment size {0} is below the minimum of 4")]
    SegmentTooSmall(usize),
    #[error("InsufficientData: {count} points, at least 4 are required")]
    InsufficientData { count: usize },
    #[error("DegenerateSegment: segment {segment} has no spatial extent")]
    DegenerateSegment { segment: usize },
    #[error("SingularParameterization: zero tangent on segment {segment} at λ={lambda}")]
    SingularParameterization { segment: usize, lambda: f64 },
    #[error("segment index {index} out of range (path has {len} segments)")]
    SegmentOutOfRange { index: usize, len: usize },
    #[error("EmptyPath: the route has no segments")]
    EmptyPath,
    #[error("malformed waypoint file at line {line}: {message}")]
    MalformedCsv { line: u64, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// GPS waypoint in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoWaypoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoWaypoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Projects waypoints into the local frame centred on `origin`.
pub fn project_waypoints(
    waypoints: &[GeoWaypoint],
    origin: GeoWaypoint,
) -> Result<Vec<LocalPoint>, PathError> {
    if waypoints.is_empty() {
        return Err(PathError::EmptyWaypointSet);
    }
    if !origin.is_valid() {
        return Err(PathError::InvalidCoordinate {
            index: usize::MAX,
            lat: origin.lat,
            lon: origin.lon,
        });
    }
    let cos_lat0 = origin.lat.to_radians().cos();
    waypoints
        .iter()
        .enumerate()
        .map(|(index, w)| {
            if !w.is_valid() {
                return Err(PathError::InvalidCoordinate {
                    index,
                    lat: w.lat,
                    lon: w.lon,
                });
            }
            Ok(LocalPoint::new(
                (w.lon - origin.lon) * cos_lat0 * METERS_PER_DEGREE,
                (w.lat - origin.lat) * METERS_PER_DEGREE,
            ))
        })
        .collect()
}

/// Inverse of [`project_waypoints`] for a single point.
pub fn unproject(point: LocalPoint, origin: GeoWaypoint) -> GeoWaypoint {
    let cos_lat0 = origin.lat.to_radians().cos();
    GeoWaypoint {
        lat: origin.lat + point.y / METERS_PER_DEGREE,
        lon: origin.lon + point.x / (cos_lat0 * METERS_PER_DEGREE),
    }
}

/// Splits points into groups of `n` that share their boundary point.
///
/// A trailing remainder shorter than [`MIN_GROUP_LEN`] is merged into the
/// previous group.
pub fn segment_points(points: &[LocalPoint], n: usize) -> Result<Vec<Vec<LocalPoint>>, PathError> {
    if n < MIN_GROUP_LEN {
        return Err(PathError::SegmentTooSmall(n));
    }
    if points.len() < MIN_GROUP_LEN {
        return Err(PathError::InsufficientData {
            count: points.len(),
        });
    }
    let stride = n - 1;
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start + 1 < points.len() {
        let end = (start + stride).min(points.len() - 1);
        ranges.push((start, end));
        start = end;
    }
    if let [.., prev, (s, e)] = ranges.as_mut_slice() {
        if *e - *s + 1 < MIN_GROUP_LEN {
            prev.1 = *e;
            ranges.pop();
        }
    }
    Ok(ranges
        .into_iter()
        .map(|(s, e)| points[s..=e].to_vec())
        .collect())
}

/// One cubic piece of the route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSegment {
    pub ax: f64,
    pub bx: f64,
    pub cx: f64,
    pub dx: f64,
    pub ay: f64,
    pub by: f64,
    pub cy: f64,
    pub dy: f64,
}

impl PathSegment {
    /// Straight segment from `p0` to `p1`.
    pub fn line(p0: LocalPoint, p1: LocalPoint) -> Self {
        Self {
            ax: 0.0,
            bx: 0.0,
            cx: p1.x - p0.x,
            dx: p0.x,
            ay: 0.0,
            by: 0.0,
            cy: p1.y - p0.y,
            dy: p0.y,
        }
    }

    pub fn position(&self, lambda: f64) -> LocalPoint {
        LocalPoint::new(
            ((self.ax * lambda + self.bx) * lambda + self.cx) * lambda + self.dx,
            ((self.ay * lambda + self.by) * lambda + self.cy) * lambda + self.dy,
        )
    }

    /// First derivative with respect to `λ`.
    pub fn derivative(&self, lambda: f64) -> LocalPoint {
        LocalPoint::new(
            (3.0 * self.ax * lambda + 2.0 * self.bx) * lambda + self.cx,
            (3.0 * self.ay * lambda + 2.0 * self.by) * lambda + self.cy,
        )
    }

    pub fn second_derivative(&self, lambda: f64) -> LocalPoint {
        LocalPoint::new(
            6.0 * self.ax * lambda + 2.0 * self.bx,
            6.0 * self.ay * lambda + 2.0 * self.by,
        )
    }

    /// Arc length from `λ = 0` to `λ = upto`.
    pub fn arc_length(&self, upto: f64) -> f64 {
        // Composite 8-point Gauss–Legendre, 4 panels.
        const NODES: [f64; 4] = [
            0.183_434_642_495_649_8,
            0.525_532_409_916_329,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_3,
        ];
        const WEIGHTS: [f64; 4] = [
            0.362_683_783_378_362,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_5,
            0.101_228_536_290_376_3,
        ];
        const PANELS: usize = 4;
        if upto <= 0.0 {
            return 0.0;
        }
        let h = upto / PANELS as f64;
        let mut total = 0.0;
        for p in 0..PANELS {
            let mid = h * (p as f64 + 0.5);
            let half = 0.5 * h;
            for (x, w) in NODES.iter().zip(WEIGHTS.iter()) {
                total += w * half * self.derivative(mid + half * x).norm();
                total += w * half * self.derivative(mid - half * x).norm();
            }
        }
        total
    }

    fn is_finite(&self) -> bool {
        [
            self.ax, self.bx, self.cx, self.dx, self.ay, self.by, self.cy, self.dy,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Position, heading and curvature at a route parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub position: LocalPoint,
    pub heading: f64,
    pub curvature: f64,
}

/// A fitted route: ordered cubic segments with cached arc lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePath {
    pub points_per_segment: usize,
    pub segments: Vec<PathSegment>,
    /// Arc length at every segment boundary; `lengths[0] == 0`.
    #[serde(rename = "lengths")]
    pub cumulative_length: Vec<f64>,
}

impl RoutePath {
    /// Builds a route from segments, computing the cumulative lengths.
    pub fn from_segments(segments: Vec<PathSegment>, points_per_segment: usize) -> Self {
        let mut cumulative_length = Vec::with_capacity(segments.len() + 1);
        let mut acc = 0.0;
        cumulative_length.push(acc);
        for seg in &segments {
            acc += seg.arc_length(1.0);
            cumulative_length.push(acc);
        }
        Self {
            points_per_segment,
            segments,
            cumulative_length,
        }
    }

    /// Straight polyline route, one linear segment per leg. Mostly useful in
    /// tests and synthetic scenarios.
    pub fn polyline(points: &[LocalPoint]) -> Self {
        let segments = points
            .windows(2)
            .map(|w| PathSegment::line(w[0], w[1]))
            .collect();
        Self::from_segments(segments, 2)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.cumulative_length.last().copied().unwrap_or(0.0)
    }

    pub fn segment(&self, index: usize) -> Result<&PathSegment, PathError> {
        self.segments.get(index).ok_or(PathError::SegmentOutOfRange {
            index,
            len: self.segments.len(),
        })
    }

    /// Arc-length station of `(segment, λ)`.
    pub fn station(&self, segment: usize, lambda: f64) -> f64 {
        match self.segments.get(segment) {
            Some(seg) => self.cumulative_length[segment] + seg.arc_length(lambda.clamp(0.0, 1.0)),
            None => self.total_length(),
        }
    }

    /// Finds `(segment, λ)` at arc-length station `s` (clamped to the route).
    pub fn locate(&self, s: f64) -> Result<(usize, f64), PathError> {
        if self.segments.is_empty() {
            return Err(PathError::EmptyPath);
        }
        let s = s.clamp(0.0, self.total_length());
        let idx = match self
            .cumulative_length
            .binary_search_by(|v| v.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(self.segments.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.segments.len() - 1),
        };
        let seg = &self.segments[idx];
        let target = s - self.cumulative_length[idx];
        let seg_len = self.cumulative_length[idx + 1] - self.cumulative_length[idx];
        if seg_len <= 0.0 {
            return Ok((idx, 0.0));
        }
        // Newton on arc length, safeguarded by bisection.
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut lambda = (target / seg_len).clamp(0.0, 1.0);
        for _ in 0..50 {
            let f = seg.arc_length(lambda) - target;
            if f.abs() < 1e-10 {
                break;
            }
            if f > 0.0 {
                hi = lambda;
            } else {
                lo = lambda;
            }
            let speed = seg.derivative(lambda).norm();
            let mut next = if speed > 1e-12 { lambda - f / speed } else { 0.5 * (lo + hi) };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            lambda = next;
        }
        Ok((idx, lambda))
    }

    /// Route sample at arc-length station `s`.
    pub fn sample_at(&self, s: f64) -> Result<PathSample, PathError> {
        let (seg, lambda) = self.locate(s)?;
        eval_path(self, seg, lambda)
    }

    /// Serializes to the route JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("route serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let doc: RoutePath = serde_json::from_str(text)?;
        Ok(Self::from_segments(doc.segments, doc.points_per_segment))
    }
}

/// Fits a C0/C1-continuous piecewise cubic to the point groups.
///
/// Within a group the parameter is assigned uniformly by sample index. The
/// two coordinates are fitted independently against the same design matrix.
pub fn fit_route(groups: &[Vec<LocalPoint>]) -> Result<RoutePath, PathError> {
    if groups.is_empty() {
        return Err(PathError::InsufficientData { count: 0 });
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < MIN_GROUP_LEN {
            return Err(PathError::InsufficientData { count: g.len() });
        }
        let first = g[0];
        if g.iter().all(|p| p.distance(first) < 1e-9) {
            return Err(PathError::DegenerateSegment { segment: i });
        }
    }

    let n_seg = groups.len();
    let n_free = 2 * n_seg + 2;
    // Coefficients of every segment as linear forms over the free variables
    // [c0, d0, a0, b0, a1, b1, ...].
    let mut basis: Vec<[Vec<f64>; 4]> = Vec::with_capacity(n_seg);
    let unit = |k: usize| {
        let mut v = vec![0.0; n_free];
        v[k] = 1.0;
        v
    };
    let mut c = unit(0);
    let mut d = unit(1);
    for i in 0..n_seg {
        let a = unit(2 + 2 * i);
        let b = unit(3 + 2 * i);
        let next_c: Vec<f64> = (0..n_free).map(|k| 3.0 * a[k] + 2.0 * b[k] + c[k]).collect();
        let next_d: Vec<f64> = (0..n_free).map(|k| a[k] + b[k] + c[k] + d[k]).collect();
        basis.push([a, b, c, d]);
        c = next_c;
        d = next_d;
    }

    let rows: usize = groups.iter().map(Vec::len).sum();
    let mut design = DMatrix::<f64>::zeros(rows, n_free);
    let mut rhs = DMatrix::<f64>::zeros(rows, 2);
    let mut row = 0;
    for (i, g) in groups.iter().enumerate() {
        let [a, b, c, d] = &basis[i];
        let denom = (g.len() - 1) as f64;
        for (k, p) in g.iter().enumerate() {
            let l = k as f64 / denom;
            let (l2, l3) = (l * l, l * l * l);
            for col in 0..n_free {
                design[(row, col)] = l3 * a[col] + l2 * b[col] + l * c[col] + d[col];
            }
            rhs[(row, 0)] = p.x;
            rhs[(row, 1)] = p.y;
            row += 1;
        }
    }

    // Column equilibration keeps the SVD well scaled for long routes.
    let scales: Vec<f64> = (0..n_free)
        .map(|col| {
            let n = design.column(col).norm();
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        })
        .collect();
    for (col, s) in scales.iter().enumerate() {
        design.column_mut(col).scale_mut(*s);
    }
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(min_sv > max_sv * 1e-13) {
        return Err(PathError::DegenerateSegment { segment: 0 });
    }
    let mut sol = svd
        .solve(&rhs, 0.0)
        .map_err(|_| PathError::DegenerateSegment { segment: 0 })?;
    for (r, s) in scales.iter().enumerate() {
        sol[(r, 0)] *= s;
        sol[(r, 1)] *= s;
    }

    let mut segments = Vec::with_capacity(n_seg);
    let (mut cx, mut dx) = (sol[(0, 0)], sol[(1, 0)]);
    let (mut cy, mut dy) = (sol[(0, 1)], sol[(1, 1)]);
    for i in 0..n_seg {
        let (ax, bx) = (sol[(2 + 2 * i, 0)], sol[(3 + 2 * i, 0)]);
        let (ay, by) = (sol[(2 + 2 * i, 1)], sol[(3 + 2 * i, 1)]);
        let seg = PathSegment {
            ax,
            bx,
            cx,
            dx,
            ay,
            by,
            cy,
            dy,
        };
        if !seg.is_finite() {
            return Err(PathError::DegenerateSegment { segment: i });
        }
        // Same operation order as `position(1)` / `derivative(1)`, so the
        // joint conditions hold exactly.
        let end = seg.position(1.0);
        let tangent = seg.derivative(1.0);
        segments.push(seg);
        dx = end.x;
        dy = end.y;
        cx = tangent.x;
        cy = tangent.y;
    }

    let points_per_segment = groups.iter().map(Vec::len).max().unwrap_or(0);
    let path = RoutePath::from_segments(segments, points_per_segment);
    for (i, w) in path.cumulative_length.windows(2).enumerate() {
        if !(w[1] - w[0] > 0.0) {
            return Err(PathError::DegenerateSegment { segment: i });
        }
    }
    Ok(path)
}

/// Groups and fits in one call.
pub fn build_route(points: &[LocalPoint], points_per_segment: usize) -> Result<RoutePath, PathError> {
    let groups = segment_points(points, points_per_segment)?;
    fit_route(&groups)
}

/// Position, heading and curvature on `segment` at `λ`.
pub fn eval_path(path: &RoutePath, segment: usize, lambda: f64) -> Result<PathSample, PathError> {
    let seg = path.segment(segment)?;
    let d1 = seg.derivative(lambda);
    let speed_sq = d1.norm_squared();
    if speed_sq.sqrt() < 1e-12 {
        return Err(PathError::SingularParameterization { segment, lambda });
    }
    let d2 = seg.second_derivative(lambda);
    Ok(PathSample {
        position: seg.position(lambda),
        heading: d1.angle(),
        curvature: d1.cross(d2) / speed_sq.powf(1.5),
    })
}

/// Waypoints as read from a file, before projection.
#[derive(Debug, Clone, PartialEq)]
pub enum WaypointSet {
    Geo(Vec<GeoWaypoint>),
    Local(Vec<LocalPoint>),
}

impl WaypointSet {
    /// Local points, projecting geographic input about its first waypoint.
    pub fn into_local(self) -> Result<Vec<LocalPoint>, PathError> {
        match self {
            WaypointSet::Local(points) => Ok(points),
            WaypointSet::Geo(geo) => {
                let origin = *geo.first().ok_or(PathError::EmptyWaypointSet)?;
                project_waypoints(&geo, origin)
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            WaypointSet::Geo(v) => v.len(),
            WaypointSet::Local(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parses a waypoint CSV with a `lat,lon` or `x,y` header.
pub fn parse_waypoints_csv<R: Read>(reader: R) -> Result<WaypointSet, PathError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| PathError::MalformedCsv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let geo = match cols.as_slice() {
        ["lat", "lon"] => true,
        ["x", "y"] => false,
        _ => {
            return Err(PathError::MalformedCsv {
                line: 1,
                message: format!("expected header `lat,lon` or `x,y`, found `{}`", cols.join(",")),
            })
        }
    };
    let mut pairs = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| PathError::MalformedCsv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(PathError::MalformedCsv {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PathError::MalformedCsv {
                    line,
                    message: format!("`{s}` is not a finite number"),
                })
        };
        pairs.push((parse(&record[0])?, parse(&record[1])?));
    }
    if pairs.is_empty() {
        return Err(PathError::EmptyWaypointSet);
    }
    Ok(if geo {
        WaypointSet::Geo(pairs.into_iter().map(|(lat, lon)| GeoWaypoint { lat, lon }).collect())
    } else {
        WaypointSet::Local(pairs.into_iter().map(|(x, y)| LocalPoint::new(x, y)).collect())
    })
}

pub fn load_waypoints(path: &Path) -> Result<WaypointSet, PathError> {
    let file = File::open(path).map_err(|e| PathError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_waypoints_csv(file)
}
