//! Charge density, enclosed charge and the radial Gauss-law field, plus a
//! brute-force Coulomb convolution used as an independent oracle.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interp::hermite;
use crate::model::ExternalFieldSpec;
use crate::par;
use crate::phase_grid::{DeviationState, PhaseGrid, RadialAxis};
use crate::quadrature::trapezoid_prefix;
use crate::{Mat3, Vec3};

/// ρ(r_i) = 2π Σ_j Σ_k w_j w_k g(r_i, u_j, μ_k) u_j².
pub fn compute_density(state: &DeviationState) -> Vec<f64> {
    density_from_values(&state.grid, &state.g)
}

pub fn density_from_values(grid: &PhaseGrid, g: &[f64]) -> Vec<f64> {
    let nu = grid.n_u();
    let nm = grid.n_mu();
    let stride = nu * nm;
    let uw: Vec<f64> = (0..nu).map(|j| grid.u_weights[j] * grid.u_nodes[j] * grid.u_nodes[j]).collect();
    par::map_indexed(grid.n_r(), |i| {
        let block = &g[i * stride..(i + 1) * stride];
        let mut acc = 0.0;
        for j in 0..nu {
            let row = &block[j * nm..(j + 1) * nm];
            let inner: f64 = row.iter().zip(&grid.mu_weights).map(|(g, w)| g * w).sum();
            acc += uw[j] * inner;
        }
        2.0 * PI * acc
    })
}

/// m(r_i) = ∫_0^{r_i} 4π s² ρ(s) ds by the composite trapezoid rule.
pub fn enclosed_charge(r: &[f64], rho: &[f64]) -> Vec<f64> {
    let integrand: Vec<f64> = r.iter().zip(rho).map(|(&s, &p)| 4.0 * PI * s * s * p).collect();
    trapezoid_prefix(r, &integrand)
}

#[derive(Clone, Debug)]
enum Locator {
    Axis(RadialAxis),
    Search,
}

/// Radial nodes shared by every snapshot of a run.
#[derive(Clone, Debug)]
pub struct RadialNodes {
    pub r: Vec<f64>,
    locator: Locator,
}

impl RadialNodes {
    pub fn from_axis(axis: &RadialAxis) -> Self {
        Self { r: axis.nodes.clone(), locator: Locator::Axis(axis.clone()) }
    }

    pub fn from_nodes(r: Vec<f64>) -> Result<Self> {
        if r.len() < 2 || r[0] != 0.0 || r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("radial nodes must start at 0 and increase strictly".into()));
        }
        Ok(Self { r, locator: Locator::Search })
    }

    pub fn r_max(&self) -> f64 {
        self.r[self.r.len() - 1]
    }

    #[inline]
    pub fn locate(&self, r: f64) -> usize {
        match &self.locator {
            Locator::Axis(a) => a.locate(r),
            Locator::Search => self.r.partition_point(|&s| s <= r).clamp(1, self.r.len() - 1) - 1,
        }
    }
}

/// ρ, m and the field at one time. m is interpolated by cubic Hermite
/// polynomials whose nodal slopes are m'(r_i) = 4π r_i² ρ(r_i); below the
/// first positive node m follows the uniform-density law m_1 (r/r_1)³ and
/// beyond r_max it is held constant.
#[derive(Clone, Debug)]
pub struct RadialFieldSnapshot {
    pub t: f64,
    pub nodes: Arc<RadialNodes>,
    pub rho: Vec<f64>,
    pub m: Vec<f64>,
    dm: Vec<f64>,
}

impl RadialFieldSnapshot {
    pub fn new(t: f64, nodes: Arc<RadialNodes>, rho: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        if rho.len() != nodes.r.len() || m.len() != nodes.r.len() {
            return Err(Error::InvalidGrid("density / charge length does not match the radial nodes".into()));
        }
        let dm = nodes.r.iter().zip(&rho).map(|(&r, &p)| 4.0 * PI * r * r * p).collect();
        Ok(Self { t, nodes, rho, m, dm })
    }

    pub fn from_density(t: f64, nodes: Arc<RadialNodes>, rho: Vec<f64>) -> Result<Self> {
        let m = enclosed_charge(&nodes.r, &rho);
        Self::new(t, nodes, rho, m)
    }

    pub fn from_state(state: &DeviationState, nodes: Arc<RadialNodes>) -> Result<Self> {
        Self::from_density(state.t, nodes, compute_density(state))
    }

    pub fn zero(t: f64, nodes: Arc<RadialNodes>) -> Self {
        let n = nodes.r.len();
        Self { t, nodes, rho: vec![0.0; n], m: vec![0.0; n], dm: vec![0.0; n] }
    }

    pub fn r(&self) -> &[f64] {
        &self.nodes.r
    }

    /// (m(r), m'(r)).
    #[inline]
    pub fn mass(&self, r: f64) -> (f64, f64) {
        let nodes = &self.nodes.r;
        let n = nodes.len();
        if r >= nodes[n - 1] {
            return (self.m[n - 1], 0.0);
        }
        let r1 = nodes[1];
        if r <= r1 {
            let s = r / r1;
            return (self.m[1] * s * s * s, 3.0 * self.m[1] * s * s / r1);
        }
        self.mass_in(r, self.nodes.locate(r))
    }

    /// (m, m') on interval i, which must contain r; skips the locate.
    #[inline]
    pub fn mass_in(&self, r: f64, i: usize) -> (f64, f64) {
        let nodes = &self.nodes.r;
        let h = nodes[i + 1] - nodes[i];
        hermite(h, self.m[i], self.m[i + 1], self.dm[i], self.dm[i + 1], r - nodes[i])
    }

    /// Density consistent with the interpolated charge, m'(r) / (4π r²).
    pub fn density_at(&self, r: f64) -> f64 {
        let r1 = self.nodes.r[1];
        if r <= r1 {
            return 3.0 * self.m[1] / (4.0 * PI * r1 * r1 * r1);
        }
        let (_, dm) = self.mass(r);
        dm / (4.0 * PI * r * r)
    }

    /// E(x) = m(|x|) x / |x|³, zero at the origin.
    #[inline]
    pub fn field_at(&self, x: &Vec3) -> Vec3 {
        let r2 = x.norm_squared();
        if r2 == 0.0 {
            return Vec3::zeros();
        }
        let r = r2.sqrt();
        let (m, _) = self.mass(r);
        x * (m / (r2 * r))
    }

    /// ∂_j E_i = m' x_i x_j / r⁴ + m (δ_ij / r³ - 3 x_i x_j / r⁵).
    #[inline]
    pub fn gradient(&self, x: &Vec3) -> Mat3 {
        radial_gradient(x, |r| self.mass(r), self.nodes.r[1], self.m[1])
    }

    pub fn total_charge(&self) -> f64 {
        self.m[self.m.len() - 1]
    }

    /// Delimited dump with header (r, rho, m, E_mag).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "r,rho,m,E_mag")?;
        for (i, &r) in self.nodes.r.iter().enumerate() {
            let e = if r > 0.0 { self.m[i].abs() / (r * r) } else { 0.0 };
            writeln!(out, "{},{},{},{}", r, self.rho[i], self.m[i], e)?;
        }
        Ok(())
    }
}

/// Gradient of m(r) x / r³ given a mass evaluator; inside the first node the
/// field is linear, E = m_1 x / r_1³.
#[inline]
pub(crate) fn radial_gradient(x: &Vec3, mass: impl Fn(f64) -> (f64, f64), r1: f64, m1: f64) -> Mat3 {
    let r2 = x.norm_squared();
    let r = r2.sqrt();
    if r <= r1 {
        return Mat3::identity() * (m1 / (r1 * r1 * r1));
    }
    let (m, dm) = mass(r);
    let xx = x * x.transpose();
    let r3 = r2 * r;
    xx * (dm / (r2 * r2) - 3.0 * m / (r3 * r2)) + Mat3::identity() * (m / r3)
}

pub fn field_at(snapshot: &RadialFieldSnapshot, x: &Vec3) -> Vec3 {
    snapshot.field_at(x)
}

/// ℰ = E + A.
pub fn total_field(snapshot: &RadialFieldSnapshot, external: &ExternalFieldSpec, t: f64, x: &Vec3) -> Vec3 {
    snapshot.field_at(x) + external.eval(t, x)
}

/// The two-branch envelope: r^{-4/5} on r ≤ 1, r^{-1/2} on r ≥ 1.
pub fn envelope(r: f64) -> f64 {
    if r <= 1.0 {
        r.powf(-0.8)
    } else {
        r.powf(-0.5)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeReport {
    /// sup over positive grid radii of |E| / envelope(r).
    pub sup_envelope_ratio: f64,
    /// sup over grid radii r ≥ 1 of |E| r².
    pub sup_tail: f64,
    /// sup over grid radii r ≥ 1 of |∂E/∂x| r², by central differences.
    pub sup_gradient_tail: f64,
}

pub fn envelope_check(snapshot: &RadialFieldSnapshot) -> EnvelopeReport {
    let mut rep = EnvelopeReport { sup_envelope_ratio: 0.0, sup_tail: 0.0, sup_gradient_tail: 0.0 };
    for (i, &r) in snapshot.r().iter().enumerate() {
        if r <= 0.0 {
            continue;
        }
        let e = snapshot.m[i].abs() / (r * r);
        rep.sup_envelope_ratio = rep.sup_envelope_ratio.max(e / envelope(r));
        if r >= 1.0 {
            rep.sup_tail = rep.sup_tail.max(e * r * r);
            rep.sup_gradient_tail = rep.sup_gradient_tail.max(fd_gradient(snapshot, &Vec3::new(r, 0.0, 0.0)).norm() * r * r);
        }
    }
    rep
}

fn fd_gradient(snapshot: &RadialFieldSnapshot, x: &Vec3) -> Mat3 {
    let h = 1e-6 * x.norm().max(1.0);
    let mut j = Mat3::zeros();
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = h;
        j.set_column(k, &((snapshot.field_at(&(x + e)) - snapshot.field_at(&(x - e))) / (2.0 * h)));
    }
    j
}

/// Cubic lattice for the direct Coulomb sum. Points sit at x + spacing·n for
/// integer n ≠ 0 inside the box [-half_width, half_width]³, so the evaluation
/// point is always the centre of the excluded cell.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LatticeSpec {
    pub half_width: f64,
    pub spacing: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleResult {
    pub x: [f64; 3],
    pub field: [f64; 3],
    /// Bound on the excluded central cell, 4π a |ρ(x)| with a = spacing·√3/2.
    pub excluded_cell_bound: f64,
    /// (4π/3) max|ρ| on the box faces times the half width.
    pub truncation_estimate: f64,
    pub points: usize,
}

/// E(x) = ∫ ρ(y) (x - y)/|x - y|³ dy by direct lattice summation.
pub fn gauss_oracle(rho: impl Fn(&Vec3) -> f64, x: &Vec3, lattice: &LatticeSpec) -> Result<OracleResult> {
    let l = lattice.half_width;
    let h = lattice.spacing;
    if !(l > 0.0 && h > 0.0 && h < l) {
        return Err(Error::Precondition("lattice needs 0 < spacing < half_width".into()));
    }
    let range = |c: f64| (((-l - c) / h).ceil() as i64, ((l - c) / h).floor() as i64);
    let (ax, bx) = range(x.x);
    let (ay, by) = range(x.y);
    let (az, bz) = range(x.z);
    let vol = h * h * h;
    let mut field = Vec3::zeros();
    let mut points = 0usize;
    for i in ax..=bx {
        for j in ay..=by {
            for k in az..=bz {
                if i == 0 && j == 0 && k == 0 {
                    continue;
                }
                let d = Vec3::new(i as f64, j as f64, k as f64) * -h;
                let y = x - d;
                let p = rho(&y);
                if p != 0.0 {
                    let r2 = d.norm_squared();
                    field += d * (p * vol / (r2 * r2.sqrt()));
                }
                points += 1;
            }
        }
    }
    let mut face_max: f64 = 0.0;
    let n = 16;
    for a in 0..=n {
        for b in 0..=n {
            let s = -l + 2.0 * l * a as f64 / n as f64;
            let t = -l + 2.0 * l * b as f64 / n as f64;
            for y in [
                Vec3::new(l, s, t),
                Vec3::new(-l, s, t),
                Vec3::new(s, l, t),
                Vec3::new(s, -l, t),
                Vec3::new(s, t, l),
                Vec3::new(s, t, -l),
            ] {
                face_max = face_max.max(rho(&y).abs());
            }
        }
    }
    Ok(OracleResult {
        x: (*x).into(),
        field: field.into(),
        excluded_cell_bound: 4.0 * PI * h * 3f64.sqrt() / 2.0 * rho(x).abs(),
        truncation_estimate: 4.0 * PI / 3.0 * face_max * l,
        points,
    })
}
