//! Elastic-band deformation of the local path around obstacles.
//!
//! The band is a chain of nodes joined by springs of stiffness `k_s`. An
//! obstacle pushes each node with a bounded repulsive force; the deformed
//! path is the static balance
//!
//! ```text
//! k_s·(u[i-1] − 2·u[i] + u[i+1]) + F_ext(r[i] + u[i]) = 0
//! ```
//!
//! for every free node, with both end nodes pinned so the deformed path
//! rejoins the route. Because `F_ext` depends on the deformed position the
//! balance is nonlinear; it is solved by Gauss–Seidel relaxation with a fixed
//! forward sweep order.

use std::io::Write;

use thiserror::Error;

use crate::geometry::LocalPoint;
use crate::path::RoutePath;

/// Upper bound on pedestrian walking speed, m/s.
pub const PEDESTRIAN_MAX_SPEED: f64 = 1.5;
/// Socially acceptable clearance around a pedestrian, meters.
pub const SOCIAL_DISTANCE: f64 = 1.5;
/// Default spacing between band nodes, meters.
pub const DEFAULT_NODE_SPACING: f64 = 0.2;
/// Default spring stiffness, N/m.
pub const DEFAULT_SPRING_STIFFNESS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandError {
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("invalid repulsion parameters: {0}")]
    InvalidParams(String),
    #[error("NonConvergence: residual {residual:.3e} after {iterations} sweeps")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        /// Last iterate, usable as a degraded result.
        band: Box<ElasticBand>,
    },
}

/// One displaceable node: original position plus displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandNode {
    pub origin: LocalPoint,
    pub displacement: LocalPoint,
    pub fixed: bool,
}

impl BandNode {
    pub fn new(origin: LocalPoint, fixed: bool) -> Self {
        Self {
            origin,
            displacement: LocalPoint::ZERO,
            fixed,
        }
    }

    pub fn position(&self) -> LocalPoint {
        self.origin + self.displacement
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticBand {
    nodes: Vec<BandNode>,
    spring_stiffness: f64,
}

impl ElasticBand {
    pub fn new(nodes: Vec<BandNode>, spring_stiffness: f64) -> Result<Self, BandError> {
        if nodes.len() < 3 {
            return Err(BandError::InvalidBand(format!(
                "{} nodes, at least 3 required",
                nodes.len()
            )));
        }
        if !(spring_stiffness > 0.0) {
            return Err(BandError::InvalidBand("spring stiffness must be positive".into()));
        }
        let (first, last) = (nodes[0], nodes[nodes.len() - 1]);
        if !first.fixed || !last.fixed {
            return Err(BandError::InvalidBand("end nodes must be fixed".into()));
        }
        if nodes
            .iter()
            .any(|n| n.fixed && n.displacement != LocalPoint::ZERO)
        {
            return Err(BandError::InvalidBand("fixed nodes cannot be displaced".into()));
        }
        Ok(Self {
            nodes,
            spring_stiffness,
        })
    }

    /// Band through `points` with both ends anchored.
    pub fn from_points(points: &[LocalPoint], spring_stiffness: f64) -> Result<Self, BandError> {
        let n = points.len();
        let nodes = points
            .iter()
            .enumerate()
            .map(|(i, p)| BandNode::new(*p, i == 0 || i + 1 == n))
            .collect();
        Self::new(nodes, spring_stiffness)
    }

    /// Samples the route between stations `s_start` and `s_end` at `spacing`.
    pub fn from_route(
        route: &RoutePath,
        s_start: f64,
        s_end: f64,
        spacing: f64,
        spring_stiffness: f64,
    ) -> Result<Self, BandError> {
        let s_start = s_start.max(0.0);
        let s_end = s_end.min(route.total_length());
        if !(spacing > 0.0) || !(s_end > s_start) {
            return Err(BandError::InvalidBand("empty route window".into()));
        }
        let count = ((s_end - s_start) / spacing).round() as usize + 1;
        let count = count.max(3);
        let step = (s_end - s_start) / (count - 1) as f64;
        let points = (0..count)
            .map(|i| {
                route
                    .sample_at(s_start + step * i as f64)
                    .map(|s| s.position)
                    .map_err(|e| BandError::InvalidBand(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_points(&points, spring_stiffness)
    }

    pub fn nodes(&self) -> &[BandNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spring_stiffness(&self) -> f64 {
        self.spring_stiffness
    }

    /// Deformed node positions `r + u`.
    pub fn positions(&self) -> Vec<LocalPoint> {
        self.nodes.iter().map(BandNode::position).collect()
    }

    pub fn max_displacement(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.displacement.norm())
            .fold(0.0, f64::max)
    }

    /// Largest static-balance residual over the free nodes.
    pub fn residual<F>(&self, mut force: F) -> f64
    where
        F: FnMut(usize, LocalPoint) -> LocalPoint,
    {
        let ks = self.spring_stiffness;
        let mut worst: f64 = 0.0;
        for i in 1..self.nodes.len() - 1 {
            let n = &self.nodes[i];
            if n.fixed {
                continue;
            }
            let lap = self.nodes[i - 1].displacement - n.displacement * 2.0
                + self.nodes[i + 1].displacement;
            let r = lap * ks + force(i, n.position());
            worst = worst.max(r.norm());
        }
        worst
    }

    /// Writes `step,node,r_x,r_y,u_x,u_y` rows for this band.
    pub fn write_snapshot<W: Write>(&self, step: usize, out: &mut W) -> std::io::Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(
                out,
                "{step},{i},{},{},{},{}",
                n.origin.x, n.origin.y, n.displacement.x, n.displacement.y
            )?;
        }
        Ok(())
    }

    /// Unit left-normal of the undeformed band at node `i`.
    fn normal_at(&self, i: usize) -> LocalPoint {
        let prev = self.nodes[i.saturating_sub(1)].origin;
        let next = self.nodes[(i + 1).min(self.nodes.len() - 1)].origin;
        let t = next - prev;
        let len = t.norm();
        if len > 0.0 {
            t.perp() * (1.0 / len)
        } else {
            LocalPoint::new(0.0, 1.0)
        }
    }
}

/// Header of the band snapshot CSV.
pub const SNAPSHOT_HEADER: &str = "step,node,r_x,r_y,u_x,u_y";

/// Repulsive force law parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RepulsionParams {
    /// Repulsion stiffness, N/m.
    pub k_e: f64,
    /// Influence range, m.
    pub r_max: f64,
    /// Safety radius, m.
    pub d: f64,
    /// Saturated force magnitude inside the safety radius, N.
    pub f_max: f64,
}

impl RepulsionParams {
    /// Parameters with `F_max = k_e·r_max`.
    pub fn new(k_e: f64, r_max: f64, d: f64) -> Result<Self, BandError> {
        let p = Self {
            k_e,
            r_max,
            d,
            f_max: k_e * r_max,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), BandError> {
        if !(self.k_e > 0.0) {
            return Err(BandError::InvalidParams("k_e must be positive".into()));
        }
        if !(self.d > 0.0 && self.d <= self.r_max) {
            return Err(BandError::InvalidParams("need 0 < d <= r_max".into()));
        }
        if !(self.f_max >= self.k_e * (self.r_max - self.d)) {
            return Err(BandError::InvalidParams(
                "F_max must be at least k_e·(r_max − d)".into(),
            ));
        }
        Ok(())
    }
}

impl Default for RepulsionParams {
    fn default() -> Self {
        let d = safety_distance(1.0, 0.1, 0.0, SOCIAL_DISTANCE);
        Self::new(15.0, 4.0, d).expect("default repulsion parameters are valid")
    }
}

/// A point obstacle moving at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub position: LocalPoint,
    pub velocity: LocalPoint,
}

impl Obstacle {
    pub fn fixed(position: LocalPoint) -> Self {
        Self {
            position,
            velocity: LocalPoint::ZERO,
        }
    }

    pub fn advanced(&self, dt: f64) -> Self {
        Self {
            position: self.position + self.velocity * dt,
            velocity: self.velocity,
        }
    }
}

/// Safety radius around a pedestrian: vehicle size, plus how far a walker at
/// [`PEDESTRIAN_MAX_SPEED`] can move during detection and communication
/// delays, plus the social clearance.
pub fn safety_distance(d_vehicle: f64, detection_dt: f64, comm_delay: f64, d_social: f64) -> f64 {
    d_vehicle + PEDESTRIAN_MAX_SPEED * (detection_dt + comm_delay) + d_social
}

/// Repulsive force on a node and whether the obstacle coincided with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSample {
    pub force: LocalPoint,
    pub coincident: bool,
}

/// Repulsion from one obstacle on a node at `node_pos`.
///
/// `fallback` is the direction used when the node sits on the obstacle.
pub fn external_force(
    node_pos: LocalPoint,
    obstacle: &Obstacle,
    params: &RepulsionParams,
    fallback: LocalPoint,
) -> ForceSample {
    let r = node_pos - obstacle.position;
    let dist = r.norm();
    if dist > params.r_max {
        return ForceSample {
            force: LocalPoint::ZERO,
            coincident: false,
        };
    }
    if dist < 1e-9 {
        let len = fallback.norm();
        let dir = if len > 0.0 {
            fallback * (1.0 / len)
        } else {
            LocalPoint::new(0.0, 1.0)
        };
        return ForceSample {
            force: dir * params.f_max,
            coincident: true,
        };
    }
    let unit = r * (1.0 / dist);
    let magnitude = if dist < params.d {
        params.f_max
    } else {
        -params.k_e * (dist - params.r_max)
    };
    ForceSample {
        force: unit * magnitude,
        coincident: false,
    }
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverSettings {
    /// Largest per-sweep node movement accepted as converged, m.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 20_000,
        }
    }
}

/// Result of a converged relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct Deformation {
    pub band: ElasticBand,
    pub iterations: usize,
    pub residual: f64,
    /// Some node coincided with an obstacle at some point of the solve.
    pub coincident: bool,
}

/// Relaxes the band against an arbitrary external force field.
///
/// `force(i, p)` is the external force on node `i` at position `p`. The
/// band's current displacements are the starting guess. Convergence needs
/// both a sweep that moves no node by more than `tol` and a balance
/// residual of at most `2·k_s·tol` at every free node.
pub fn relax<F>(band: &ElasticBand, mut force: F, tol: f64, max_iter: usize) -> Result<Deformation, BandError>
where
    F: FnMut(usize, LocalPoint) -> LocalPoint,
{
    relax_with_stiffness(band, |i, p| (force(i, p), [0.0; 3]), tol, max_iter)
}

/// Gauss–Seidel sweep where the force field also reports the stiffness
/// `[k_xx, k_xy, k_yy]` of its restoring part. Each node update is
/// preconditioned by `(I + K/(2k_s))⁻¹`, which keeps the sweep stable when the
/// force gradient exceeds the spring stiffness. Fixed points are unchanged.
fn relax_with_stiffness<F>(
    band: &ElasticBand,
    mut field: F,
    tol: f64,
    max_iter: usize,
) -> Result<Deformation, BandError>
where
    F: FnMut(usize, LocalPoint) -> (LocalPoint, [f64; 3]),
{
    if !(tol > 0.0) {
        return Err(BandError::InvalidParams("tol must be positive".into()));
    }
    let mut out = band.clone();
    let ks = out.spring_stiffness;
    let n = out.nodes.len();
    let limit = 2.0 * ks * tol;
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let mut max_change: f64 = 0.0;
        for i in 1..n - 1 {
            if out.nodes[i].fixed {
                continue;
            }
            let (f, [kxx, kxy, kyy]) = field(i, out.nodes[i].position());
            let avg = (out.nodes[i - 1].displacement + out.nodes[i + 1].displacement) * 0.5;
            let delta = avg + f * (0.5 / ks) - out.nodes[i].displacement;
            let (a, b, c) = (1.0 + kxx * 0.5 / ks, kxy * 0.5 / ks, 1.0 + kyy * 0.5 / ks);
            let det = a * c - b * b;
            let step = LocalPoint::new(c * delta.x - b * delta.y, a * delta.y - b * delta.x) * (1.0 / det);
            max_change = max_change.max(step.norm());
            out.nodes[i].displacement += step;
        }
        if !max_change.is_finite() {
            break;
        }
        if max_change < tol {
            residual = out.residual(|i, p| field(i, p).0);
            if residual <= limit {
                return Ok(Deformation {
                    band: out,
                    iterations: iteration,
                    residual,
                    coincident: false,
                });
            }
        }
    }
    if !residual.is_finite() {
        residual = out.residual(|i, p| field(i, p).0);
    }
    Err(BandError::NonConvergence {
        residual,
        iterations: max_iter,
        band: Box::new(out),
    })
}

/// Deforms the band away from `obstacles` (forces summed per node).
pub fn deform(
    band: &ElasticBand,
    obstacles: &[Obstacle],
    params: &RepulsionParams,
    settings: SolverSettings,
) -> Result<Deformation, BandError> {
    params.validate()?;
    let normals: Vec<LocalPoint> = (0..band.len()).map(|i| band.normal_at(i)).collect();
    let mut coincident = false;
    let field = |i: usize, p: LocalPoint| {
        let mut total = LocalPoint::ZERO;
        let mut k = [0.0; 3];
        for o in obstacles {
            let s = external_force(p, o, params, normals[i]);
            coincident |= s.coincident;
            total += s.force;
            let r = p - o.position;
            let dist = r.norm();
            if dist >= params.d && dist <= params.r_max && dist > 0.0 {
                let u = r * (1.0 / dist);
                k[0] += params.k_e * u.x * u.x;
                k[1] += params.k_e * u.x * u.y;
                k[2] += params.k_e * u.y * u.y;
            }
        }
        (total, k)
    };
    let mut result = relax_with_stiffness(band, field, settings.tol, settings.max_iter)?;
    result.coincident = coincident;
    Ok(result)
}

/// Advances a moving obstacle by `dt` and re-solves, warm-starting from the
/// band's current deformation.
pub fn step_moving(
    band: &ElasticBand,
    obstacle: &Obstacle,
    dt: f64,
    params: &RepulsionParams,
    settings: SolverSettings,
) -> Result<(Deformation, Obstacle), BandError> {
    let moved = obstacle.advanced(dt);
    let result = deform(band, std::slice::from_ref(&moved), params, settings)?;
    Ok((result, moved))
}
