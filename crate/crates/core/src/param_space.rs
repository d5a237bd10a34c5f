//! Gain design in the `(k_p, k_d)` plane: pole-region feasibility over an
//! uncertainty box, gain selection, and an optional mixed-sensitivity check.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::LateralGains;
use crate::vehicle::{lateral_matrices, LateralParams, LongitudinalPlant, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("DegenerateLoop: {0}")]
    DegenerateLoop(String),
    #[error("NoFeasibleGains: the feasible mask is empty")]
    NoFeasibleGains,
    #[error("invalid D-region: {0}")]
    InvalidRegion(String),
    #[error("invalid uncertainty box: {0}")]
    InvalidBox(String),
    #[error("gain grids must be non-empty")]
    EmptyGrid,
    #[error("invalid frequency grid: {0}")]
    InvalidFrequencyGrid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Admissible pole region: decay rate, damping cone and bandwidth circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DRegion {
    pub sigma_min: f64,
    /// Half-angle of the damping cone from the negative real axis, rad.
    pub theta: f64,
    pub omega_max: f64,
}

impl Default for DRegion {
    fn default() -> Self {
        Self {
            sigma_min: 0.1,
            theta: 60f64.to_radians(),
            omega_max: 400.0,
        }
    }
}

impl DRegion {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.sigma_min >= 0.0) {
            return Err(ParamError::InvalidRegion("sigma must be non-negative".into()));
        }
        if !(self.theta > 0.0 && self.theta < std::f64::consts::FRAC_PI_2) {
            return Err(ParamError::InvalidRegion("theta must lie in (0, π/2)".into()));
        }
        if !(self.omega_max > self.sigma_min) {
            return Err(ParamError::InvalidRegion("omega must exceed sigma".into()));
        }
        Ok(())
    }
}

/// Decay, damping-cone and bandwidth test. A root at the origin is never
/// inside.
pub fn in_d_region(root: Complex64, region: &DRegion) -> bool {
    if root.re == 0.0 && root.im == 0.0 {
        return false;
    }
    let angle = (-root).arg().abs();
    root.re <= -region.sigma_min && angle <= region.theta && root.norm() <= region.omega_max
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn ends(&self) -> [f64; 2] {
        [self.lo, self.hi]
    }

    fn validate(&self, name: &str) -> Result<(), ParamError> {
        if !(self.lo > 0.0 && self.hi >= self.lo && self.hi.is_finite()) {
            return Err(ParamError::InvalidBox(format!(
                "{name} range [{}, {}] must be positive and ordered",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Operating-condition box. `eta` scales both cornering stiffnesses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBox {
    pub m: Interval,
    pub vx: Interval,
    pub eta: Interval,
}

impl UncertaintyBox {
    pub fn fusion() -> Self {
        Self {
            m: Interval::new(1977.6, 2300.0),
            vx: Interval::new(2.0, 10.0),
            eta: Interval::new(0.5, 1.0),
        }
    }

    pub fn dash() -> Self {
        Self {
            m: Interval::new(350.0, 600.0),
            vx: Interval::new(1.0, 5.0),
            eta: Interval::new(0.5, 1.0),
        }
    }

    /// Default box for a shipped preset name.
    pub fn for_preset(name: &str) -> Option<Self> {
        match name {
            "fusion" => Some(Self::fusion()),
            "dash" => Some(Self::dash()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.m.validate("m")?;
        self.vx.validate("vx")?;
        self.eta.validate("eta")
    }

    /// The eight corner vehicles of the box.
    pub fn vertices(&self, base: &LateralParams) -> Vec<LateralParams> {
        let mut out = Vec::with_capacity(8);
        for m in self.m.ends() {
            for v in self.vx.ends() {
                for eta in self.eta.ends() {
                    out.push(LateralParams {
                        m,
                        v_x: v,
                        c_f: base.c_f * eta,
                        c_r: base.c_r * eta,
                        ..*base
                    });
                }
            }
        }
        out
    }
}

/// Closed-loop state matrix over `(v_y, r, h, Δψ)` with PD on the
/// linearized preview error `y = h + l_s·Δψ`.
pub fn closed_loop_matrix(p: &LateralParams, gains: &LateralGains, l_s: f64) -> Result<Matrix4<f64>, ParamError> {
    let (a, b) = lateral_matrices(p)?;
    let v = p.v_x;
    let a_aug = Matrix4::new(
        a[(0, 0)], a[(0, 1)], 0.0, 0.0,
        a[(1, 0)], a[(1, 1)], 0.0, 0.0,
        1.0, 0.0, 0.0, v,
        0.0, 1.0, 0.0, 0.0,
    );
    let b_aug = Vector4::new(b[0], b[1], 0.0, 0.0);
    let (kp, kd) = (gains.k_p, gains.k_d);
    let k = nalgebra::RowVector4::new(kd, kd * l_s, kp, kp * l_s + kd * v);
    Ok(a_aug - b_aug * k)
}

fn sort_roots(roots: &mut [Complex64]) {
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Closed-loop poles sorted by real part, then imaginary part.
///
/// `gains.k_p = 0` is accepted here so the open loop can be inspected.
pub fn closed_loop_poles(p: &LateralParams, gains: &LateralGains, l_s: f64) -> Result<Vec<Complex64>, ParamError> {
    let m = closed_loop_matrix(p, gains, l_s)?;
    let mut roots: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    if roots.iter().any(|r| !r.re.is_finite() || !r.im.is_finite()) {
        return Err(ParamError::DegenerateLoop("non-finite closed-loop root".into()));
    }
    sort_roots(&mut roots);
    Ok(roots)
}

/// Boolean feasibility map over a gain grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub kp_grid: Vec<f64>,
    pub kd_grid: Vec<f64>,
    /// `mask[i][j]` is the cell `(kp_grid[i], kd_grid[j])`.
    pub mask: Vec<Vec<bool>>,
}

impl FeasibleRegion {
    pub fn count(&self) -> usize {
        self.mask.iter().flatten().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kp,kd,feasible\n");
        for (i, row) in self.mask.iter().enumerate() {
            for (j, &f) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", self.kp_grid[i], self.kd_grid[j], u8::from(f)));
            }
        }
        out
    }
}

/// `k_p` axis `2(i+1)/n`, i.e. `(0, 2]`.
pub fn default_kp_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * (i + 1) as f64 / n as f64).collect()
}

/// `k_d` axis `j/(n−1)`, i.e. `[0, 1]`.
pub fn default_kd_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
}

/// Grid sweep over any loop whose poles are a function of a vertex and two
/// gains. A cell is feasible iff every vertex's poles lie in the region.
pub fn feasible_region_with<V, F>(
    vertices: &[V],
    poles: F,
    region: &DRegion,
    kp_grid: &[f64],
    kd_grid: &[f64],
) -> Result<FeasibleRegion, ParamError>
where
    V: Sync,
    F: Fn(&V, f64, f64) -> Result<Vec<Complex64>, ParamError> + Sync,
{
    if kp_grid.is_empty() || kd_grid.is_empty() {
        return Err(ParamError::EmptyGrid);
    }
    region.validate()?;
    let mask = kp_grid
        .par_iter()
        .map(|&kp| {
            kd_grid
                .iter()
                .map(|&kd| {
                    vertices.iter().all(|v| match poles(v, kp, kd) {
                        Ok(roots) => roots.iter().all(|r| in_d_region(*r, region)),
                        Err(_) => false,
                    })
                })
                .collect()
        })
        .collect();
    Ok(FeasibleRegion {
        kp_grid: kp_grid.to_vec(),
        kd_grid: kd_grid.to_vec(),
        mask,
    })
}

/// Lateral PD feasibility over the eight box vertices.
pub fn feasible_region(
    base: &LateralParams,
    bx: &UncertaintyBox,
    region: &DRegion,
    l_s: f64,
    kp_grid: &[f64],
    kd_grid: &[f64],
) -> Result<FeasibleRegion, ParamError> {
    bx.validate()?;
    let vertices = bx.vertices(base);
    for v in &vertices {
        lateral_matrices(v)?;
    }
    feasible_region_with(
        &vertices,
        |p, kp, kd| closed_loop_poles(p, &LateralGains::new(kp, kd), l_s),
        region,
        kp_grid,
        kd_grid,
    )
}

/// Poles of the PI speed loop `s² + (a + b·k_p)s + b·k_i` on a first-order
/// plant.
pub fn speed_loop_poles(plant: &LongitudinalPlant, k_p: f64, k_i: f64) -> Vec<Complex64> {
    let b1 = plant.a + plant.b * k_p;
    let c = plant.b * k_i;
    let disc = Complex64::new(b1 * b1 - 4.0 * c, 0.0).sqrt();
    let mut roots = vec![(-b1 + disc) * 0.5, (-b1 - disc) * 0.5];
    sort_roots(&mut roots);
    roots
}

/// PI speed-loop feasibility over a set of plants, reusing the lateral
/// machinery with `(k_p, k_i)` on the axes.
pub fn speed_feasible_region(
    plants: &[LongitudinalPlant],
    region: &DRegion,
    kp_grid: &[f64],
    ki_grid: &[f64],
) -> Result<FeasibleRegion, ParamError> {
    feasible_region_with(
        plants,
        |p, kp, ki| Ok(speed_loop_poles(p, kp, ki)),
        region,
        kp_grid,
        ki_grid,
    )
}

/// Selected gains and the grid cell they came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainChoice {
    pub kp: f64,
    pub kd: f64,
    pub kp_index: usize,
    pub kd_index: usize,
    /// Chessboard distance, in cells, to the nearest infeasible cell.
    pub clearance: u32,
}

/// Chessboard distance from every cell to the nearest infeasible cell,
/// treating everything outside the grid as infeasible.
pub fn clearance_map(mask: &[Vec<bool>]) -> Vec<Vec<u32>> {
    let rows = mask.len();
    let cols = mask.first().map_or(0, Vec::len);
    let mut d: Vec<Vec<u32>> = mask
        .iter()
        .map(|row| row.iter().map(|&f| if f { u32::MAX } else { 0 }).collect())
        .collect();
    let get = |d: &Vec<Vec<u32>>, i: isize, j: isize| -> u32 {
        if i < 0 || j < 0 || i >= rows as isize || j >= cols as isize {
            0
        } else {
            d[i as usize][j as usize]
        }
    };
    for i in 0..rows as isize {
        for j in 0..cols as isize {
            let cur = d[i as usize][j as usize];
            if cur == 0 {
                continue;
            }
            let best = [(-1, -1), (-1, 0), (-1, 1), (0, -1)]
                .iter()
                .map(|(di, dj)| get(&d, i + di, j + dj))
                .min()
                .unwrap();
            d[i as usize][j as usize] = cur.min(best.saturating_add(1));
        }
    }
    for i in (0..rows as isize).rev() {
        for j in (0..cols as isize).rev() {
            let cur = d[i as usize][j as usize];
            if cur == 0 {
                continue;
            }
            let best = [(1, 1), (1, 0), (1, -1), (0, 1)]
                .iter()
                .map(|(di, dj)| get(&d, i + di, j + dj))
                .min()
                .unwrap();
            d[i as usize][j as usize] = cur.min(best.saturating_add(1));
        }
    }
    d
}

/// The feasible cell deepest inside the mask; ties go to smaller `k_d`,
/// then smaller `k_p`.
pub fn pick_gains(region: &FeasibleRegion) -> Result<GainChoice, ParamError> {
    let dist = clearance_map(&region.mask);
    let mut best: Option<(u32, usize, usize)> = None;
    for j in 0..region.kd_grid.len() {
        for i in 0..region.kp_grid.len() {
            let c = dist[i][j];
            if c == 0 {
                continue;
            }
            if best.is_none_or(|(b, _, _)| c > b) {
                best = Some((c, i, j));
            }
        }
    }
    let (clearance, i, j) = best.ok_or(ParamError::NoFeasibleGains)?;
    Ok(GainChoice {
        kp: region.kp_grid[i],
        kd: region.kd_grid[j],
        kp_index: i,
        kd_index: j,
        clearance,
    })
}

/// First-order sensitivity weights: `W_S = g·ω_c/(s + ω_c)` and
/// `W_T = g·s/(s + ω_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityWeights {
    pub ws_gain: f64,
    pub ws_corner: f64,
    pub wt_gain: f64,
    pub wt_corner: f64,
}

impl SensitivityWeights {
    pub fn scaled(self, k: f64) -> Self {
        Self {
            ws_gain: self.ws_gain * k,
            wt_gain: self.wt_gain * k,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SensitivityDetail {
    Satisfied,
    Violated,
    UnstableLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub satisfied: bool,
    pub detail: SensitivityDetail,
    /// Largest `|W_S S| + |W_T T|` over the grid.
    pub peak: f64,
    pub peak_omega: f64,
}

/// Loop transfer `L(jω) = (k_p + k_d·jω)·G_y(jω)` from steering to preview
/// error.
pub fn loop_transfer(p: &LateralParams, gains: &LateralGains, l_s: f64, omega: f64) -> Result<Complex64, ParamError> {
    let (a, b) = lateral_matrices(p)?;
    let v = p.v_x;
    let s = Complex64::new(0.0, omega);
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let c = |x: f64| Complex64::new(x, 0.0);
    let m = Matrix4::new(
        s - c(a[(0, 0)]), -c(a[(0, 1)]), z, z,
        -c(a[(1, 0)]), s - c(a[(1, 1)]), z, z,
        -one, z, s, -c(v),
        z, -one, z, s,
    );
    let rhs = Vector4::new(c(b[0]), c(b[1]), z, z);
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| ParamError::DegenerateLoop(format!("singular resolvent at ω = {omega}")))?;
    let g = x[2] + c(l_s) * x[3];
    Ok((c(gains.k_p) + c(gains.k_d) * s) * g)
}

/// `|W_S S| + |W_T T| < 1` on every grid frequency.
pub fn check_mixed_sensitivity(
    p: &LateralParams,
    gains: &LateralGains,
    l_s: f64,
    weights: &SensitivityWeights,
    omega_grid: &[f64],
) -> Result<SensitivityReport, ParamError> {
    if omega_grid.is_empty() || omega_grid.iter().any(|w| !(*w > 0.0)) || omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ParamError::InvalidFrequencyGrid("must be positive and ascending".into()));
    }
    let poles = closed_loop_poles(p, gains, l_s)?;
    if poles.iter().any(|r| r.re >= 0.0) {
        return Ok(SensitivityReport {
            satisfied: false,
            detail: SensitivityDetail::UnstableLoop,
            peak: f64::INFINITY,
            peak_omega: 0.0,
        });
    }
    let mut peak = 0.0;
    let mut peak_omega = omega_grid[0];
    for &w in omega_grid {
        let l = loop_transfer(p, gains, l_s, w)?;
        let one = Complex64::new(1.0, 0.0);
        let sens = one / (one + l);
        let comp = l / (one + l);
        let s = Complex64::new(0.0, w);
        let ws = weights.ws_gain * weights.ws_corner / (s + weights.ws_corner);
        let wt = weights.wt_gain * s / (s + weights.wt_corner);
        let value = (ws * sens).norm() + (wt * comp).norm();
        if value > peak {
            peak = value;
            peak_omega = w;
        }
    }
    let satisfied = peak < 1.0;
    Ok(SensitivityReport {
        satisfied,
        detail: if satisfied {
            SensitivityDetail::Satisfied
        } else {
            SensitivityDetail::Violated
        },
        peak,
        peak_omega,
    })
}

/// Logarithmically spaced frequency grid.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n.max(2) - 1) as f64).exp())
        .collect()
}
