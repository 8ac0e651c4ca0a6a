//! Backward characteristics dX/ds = V, dV/ds = -ℰ(s, X) through a stored
//! field history, the variational system for 𝔸 = ∂X/∂v and 𝔹 = ∂V/∂v, and
//! the checks built on them.

use std::f64::consts::PI;

use nalgebra::Matrix6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{radial_gradient, RadialFieldSnapshot, RadialNodes};
use crate::model::{BackgroundSpec, ExternalFieldSpec};
use crate::quadrature::{gauss_legendre, gauss_legendre_on};
use crate::{par, Mat3, Vec3};

/// A time-dependent force field ℰ(s, x) with its spatial gradient.
pub trait ForceField: Sync {
    fn field(&self, s: f64, x: &Vec3) -> Vec3;

    /// ∂_j ℰ_i.
    fn gradient(&self, s: f64, x: &Vec3) -> Mat3;

    /// Charge density with ∇·E = 4πρ.
    fn density(&self, _s: f64, _x: &Vec3) -> f64 {
        0.0
    }

    /// Closed interval of times where the field can be evaluated.
    fn time_domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    /// True when ∇·ℰ = 4πρ, i.e. the external part is divergence free.
    fn satisfies_gauss_law(&self) -> bool {
        true
    }

    /// sup_x |ℰ(s, x)| at time s, used for admissibility constants.
    fn sup_norm(&self, _s: f64) -> f64 {
        f64::INFINITY
    }
}

/// ℰ ≡ 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroField;

impl ForceField for ZeroField {
    fn field(&self, _s: f64, _x: &Vec3) -> Vec3 {
        Vec3::zeros()
    }
    fn gradient(&self, _s: f64, _x: &Vec3) -> Mat3 {
        Mat3::zeros()
    }
    fn sup_norm(&self, _s: f64) -> f64 {
        0.0
    }
}

/// ℰ ≡ e0.
#[derive(Clone, Copy, Debug)]
pub struct UniformField(pub Vec3);

impl ForceField for UniformField {
    fn field(&self, _s: f64, _x: &Vec3) -> Vec3 {
        self.0
    }
    fn gradient(&self, _s: f64, _x: &Vec3) -> Mat3 {
        Mat3::zeros()
    }
    fn sup_norm(&self, _s: f64) -> f64 {
        self.0.norm()
    }
}

/// ℰ = e0 + M x, with density tr(M) / 4π.
#[derive(Clone, Copy, Debug)]
pub struct AffineField {
    pub offset: Vec3,
    pub matrix: Mat3,
}

impl ForceField for AffineField {
    fn field(&self, _s: f64, x: &Vec3) -> Vec3 {
        self.offset + self.matrix * x
    }
    fn gradient(&self, _s: f64, _x: &Vec3) -> Mat3 {
        self.matrix
    }
    fn density(&self, _s: f64, _x: &Vec3) -> f64 {
        self.matrix.trace() / (4.0 * PI)
    }
}

/// A static snapshot plus an external field.
pub struct FrozenField<'a> {
    pub snapshot: &'a RadialFieldSnapshot,
    pub external: &'a ExternalFieldSpec,
}

impl ForceField for FrozenField<'_> {
    fn field(&self, s: f64, x: &Vec3) -> Vec3 {
        self.snapshot.field_at(x) + self.external.eval(s, x)
    }
    fn gradient(&self, s: f64, x: &Vec3) -> Mat3 {
        self.snapshot.gradient(x) + self.external.jacobian(s, x)
    }
    fn density(&self, _s: f64, x: &Vec3) -> f64 {
        self.snapshot.density_at(x.norm())
    }
    fn satisfies_gauss_law(&self) -> bool {
        self.external.is_divergence_free()
    }
}

/// Snapshots at increasing times, linearly interpolated in time, plus the
/// external field.
#[derive(Clone, Debug)]
pub struct FieldHistory {
    pub external: ExternalFieldSpec,
    pub nodes: std::sync::Arc<RadialNodes>,
    times: Vec<f64>,
    snapshots: Vec<RadialFieldSnapshot>,
    /// sup_r |E| per snapshot.
    sup_e: Vec<f64>,
}

impl FieldHistory {
    pub fn new(first: RadialFieldSnapshot, external: ExternalFieldSpec) -> Self {
        let nodes = first.nodes.clone();
        let sup = sup_field(&first);
        Self { external, nodes, times: vec![first.t], snapshots: vec![first], sup_e: vec![sup] }
    }

    pub fn push(&mut self, snapshot: RadialFieldSnapshot) -> Result<()> {
        let last = *self.times.last().unwrap();
        if !(snapshot.t > last) {
            return Err(Error::Precondition(format!("snapshot time {} does not follow {}", snapshot.t, last)));
        }
        self.times.push(snapshot.t);
        self.sup_e.push(sup_field(&snapshot));
        self.snapshots.push(snapshot);
        Ok(())
    }

    pub fn replace_last(&mut self, snapshot: RadialFieldSnapshot) -> Result<()> {
        let n = self.snapshots.len();
        if (snapshot.t - self.times[n - 1]).abs() > 1e-12 * snapshot.t.abs().max(1.0) {
            return Err(Error::Precondition("replacement snapshot has a different time".into()));
        }
        self.sup_e[n - 1] = sup_field(&snapshot);
        self.snapshots[n - 1] = snapshot;
        Ok(())
    }

    pub fn snapshots(&self) -> &[RadialFieldSnapshot] {
        &self.snapshots
    }

    pub fn last(&self) -> &RadialFieldSnapshot {
        self.snapshots.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Snapshot pair and weight of the later one.
    #[inline]
    fn bracket(&self, s: f64) -> (usize, f64) {
        let n = self.times.len();
        if n == 1 || s <= self.times[0] {
            return (0, 0.0);
        }
        if s >= self.times[n - 1] {
            return (n - 2, 1.0);
        }
        let k = self.times.partition_point(|&t| t <= s) - 1;
        let theta = (s - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (k, theta)
    }

    /// Time-interpolated (m, m') at radius r.
    #[inline]
    fn mass(&self, s: f64, r: f64) -> (f64, f64) {
        let (k, theta) = self.bracket(s);
        let nodes = &self.nodes.r;
        let n = nodes.len();
        let a = &self.snapshots[k];
        let pair = |f: &dyn Fn(&RadialFieldSnapshot) -> (f64, f64)| {
            if theta == 0.0 {
                f(a)
            } else {
                let b = &self.snapshots[k + 1];
                let (ma, da) = f(a);
                let (mb, db) = f(b);
                ((1.0 - theta) * ma + theta * mb, (1.0 - theta) * da + theta * db)
            }
        };
        if r >= nodes[n - 1] || r <= nodes[1] {
            pair(&|snap: &RadialFieldSnapshot| snap.mass(r))
        } else {
            let i = self.nodes.locate(r);
            pair(&|snap: &RadialFieldSnapshot| snap.mass_in(r, i))
        }
    }

    fn inner_mass(&self, s: f64) -> f64 {
        let (k, theta) = self.bracket(s);
        let a = self.snapshots[k].m[1];
        if theta == 0.0 {
            a
        } else {
            (1.0 - theta) * a + theta * self.snapshots[k + 1].m[1]
        }
    }

    /// E only, without the external part.
    #[inline]
    pub fn self_field(&self, s: f64, x: &Vec3) -> Vec3 {
        let r2 = x.norm_squared();
        if r2 == 0.0 {
            return Vec3::zeros();
        }
        let r = r2.sqrt();
        let (m, _) = self.mass(s, r);
        x * (m / (r2 * r))
    }

    /// sup over the stored snapshots between 0 and t of sup_x |ℰ|.
    pub fn sup_field_until(&self, t: f64) -> f64 {
        let a = self.external.sup_norm();
        self.times
            .iter()
            .zip(&self.sup_e)
            .filter(|(&s, _)| s <= t + 1e-12)
            .map(|(_, &e)| e + a)
            .fold(0.0, f64::max)
    }

    /// ∫_0^t sup_x |ℰ(τ)| dτ by the trapezoid rule over snapshot times.
    pub fn integrated_sup(&self, t: f64) -> f64 {
        let a = self.external.sup_norm();
        let mut acc = 0.0;
        for k in 1..self.times.len() {
            let (t0, t1) = (self.times[k - 1], self.times[k]);
            if t0 >= t {
                break;
            }
            let hi = t1.min(t);
            let frac = (hi - t0) / (t1 - t0);
            let e1 = self.sup_e[k - 1] + frac * (self.sup_e[k] - self.sup_e[k - 1]);
            acc += 0.5 * (self.sup_e[k - 1] + e1) * (hi - t0) + a * (hi - t0);
        }
        acc
    }
}

fn sup_field(s: &RadialFieldSnapshot) -> f64 {
    s.r().iter().zip(&s.m).skip(1).map(|(&r, &m)| m.abs() / (r * r)).fold(0.0, f64::max)
}

impl ForceField for FieldHistory {
    #[inline]
    fn field(&self, s: f64, x: &Vec3) -> Vec3 {
        self.self_field(s, x) + self.external.eval(s, x)
    }

    fn gradient(&self, s: f64, x: &Vec3) -> Mat3 {
        let r1 = self.nodes.r[1];
        radial_gradient(x, |r| self.mass(s, r), r1, self.inner_mass(s)) + self.external.jacobian(s, x)
    }

    fn density(&self, s: f64, x: &Vec3) -> f64 {
        let r = x.norm();
        let r1 = self.nodes.r[1];
        if r <= r1 {
            return 3.0 * self.inner_mass(s) / (4.0 * PI * r1 * r1 * r1);
        }
        self.mass(s, r).1 / (4.0 * PI * r * r)
    }

    fn time_domain(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    fn satisfies_gauss_law(&self) -> bool {
        self.external.is_divergence_free()
    }

    fn sup_norm(&self, s: f64) -> f64 {
        let (k, theta) = self.bracket(s);
        let e = if theta == 0.0 { self.sup_e[k] } else { self.sup_e[k].max(self.sup_e[k + 1]) };
        e + self.external.sup_norm()
    }
}

/// Phase-space point at time s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharState {
    pub s: f64,
    pub x: Vec3,
    pub v: Vec3,
}

/// 𝔸 = ∂X/∂v, 𝔹 = ∂V/∂v and optionally the full 6×6 Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    pub a: Mat3,
    pub b: Mat3,
    pub j6: Option<Matrix6<f64>>,
    /// 4π ∫_s^t (τ - t) ρ(τ, X(τ)) dτ accumulated along the trace.
    pub leading: f64,
}

impl VariationalState {
    pub fn terminal(with_j6: bool) -> Self {
        Self { a: Mat3::zeros(), b: Mat3::identity(), j6: with_j6.then(Matrix6::identity), leading: 0.0 }
    }
}

fn check_interval<F: ForceField + ?Sized>(field: &F, s0: f64, s1: f64, dt_ode: f64) -> Result<()> {
    if !(dt_ode > 0.0 && dt_ode.is_finite()) {
        return Err(Error::Precondition(format!("dt_ode = {dt_ode} must be positive")));
    }
    let (lo, hi) = field.time_domain();
    let tol = 1e-9 * (1.0 + hi.abs());
    let (a, b) = if s0 <= s1 { (s0, s1) } else { (s1, s0) };
    if a < lo - tol || b > hi + tol {
        let s = if a < lo - tol { a } else { b };
        return Err(Error::OutsideHistory { s, start: lo, end: hi });
    }
    Ok(())
}

/// Number of fixed substeps from s0 to s1, the last one possibly shorter.
#[inline]
fn substeps(s0: f64, s1: f64, dt_ode: f64) -> usize {
    let span = (s1 - s0).abs();
    if span == 0.0 {
        0
    } else {
        ((span / dt_ode) - 1e-9).ceil().max(1.0) as usize
    }
}

#[inline]
fn step_len(s0: f64, s1: f64, dt_ode: f64, k: usize, n: usize) -> f64 {
    let dir = if s1 >= s0 { 1.0 } else { -1.0 };
    if k + 1 == n {
        (s1 - s0) - dir * dt_ode * (n - 1) as f64
    } else {
        dir * dt_ode
    }
}

/// One classical RK4 step of (X, V) with signed step h.
#[inline]
pub fn rk4_step<F: ForceField + ?Sized>(field: &F, s: f64, h: f64, x: &Vec3, v: &Vec3) -> (Vec3, Vec3) {
    let half = 0.5 * h;
    let k1x = *v;
    let k1v = -field.field(s, x);
    let k2x = v + k1v * half;
    let k2v = -field.field(s + half, &(x + k1x * half));
    let k3x = v + k2v * half;
    let k3v = -field.field(s + half, &(x + k2x * half));
    let k4x = v + k3v * h;
    let k4v = -field.field(s + h, &(x + k3x * h));
    let sixth = h / 6.0;
    (
        x + (k1x + (k2x + k3x) * 2.0 + k4x) * sixth,
        v + (k1v + (k2v + k3v) * 2.0 + k4v) * sixth,
    )
}

/// Integrate (X, V) from (s0, x, v) to s1 in either direction without checks.
#[inline]
pub fn integrate_unchecked<F: ForceField + ?Sized>(field: &F, s0: f64, x: Vec3, v: Vec3, s1: f64, dt_ode: f64) -> (Vec3, Vec3) {
    let n = substeps(s0, s1, dt_ode);
    let (mut x, mut v) = (x, v);
    let mut s = s0;
    for k in 0..n {
        let h = step_len(s0, s1, dt_ode, k, n);
        let (nx, nv) = rk4_step(field, s, h, &x, &v);
        x = nx;
        v = nv;
        s = if k + 1 == n { s1 } else { s + h };
    }
    (x, v)
}

/// Like [`integrate_unchecked`] but carries the velocity increment
/// dV = V - v instead of V, so small increments keep full relative precision.
/// Returns (X, dV).
#[inline]
pub fn integrate_increment_unchecked<F: ForceField + ?Sized>(field: &F, s0: f64, x: Vec3, v: Vec3, s1: f64, dt_ode: f64) -> (Vec3, Vec3) {
    let n = substeps(s0, s1, dt_ode);
    let (mut x, mut d) = (x, Vec3::zeros());
    let mut s = s0;
    for k in 0..n {
        let h = step_len(s0, s1, dt_ode, k, n);
        let half = 0.5 * h;
        let k1v = -field.field(s, &x);
        let k1x = v + d;
        let k2v = -field.field(s + half, &(x + k1x * half));
        let k2x = v + (d + k1v * half);
        let k3v = -field.field(s + half, &(x + k2x * half));
        let k3x = v + (d + k2v * half);
        let k4v = -field.field(s + h, &(x + k3x * h));
        let k4x = v + (d + k3v * h);
        let sixth = h / 6.0;
        x += (k1x + (k2x + k3x) * 2.0 + k4x) * sixth;
        d += (k1v + (k2v + k3v) * 2.0 + k4v) * sixth;
        s = if k + 1 == n { s1 } else { s + h };
    }
    (x, d)
}

pub fn integrate<F: ForceField + ?Sized>(field: &F, s0: f64, x: &Vec3, v: &Vec3, s1: f64, dt_ode: f64) -> Result<CharState> {
    check_interval(field, s0, s1, dt_ode)?;
    let (x, v) = integrate_unchecked(field, s0, *x, *v, s1, dt_ode);
    if !(x.iter().all(|c| c.is_finite()) && v.iter().all(|c| c.is_finite())) {
        return Err(Error::OutOfDomain("non-finite characteristic".into()));
    }
    Ok(CharState { s: s1, x, v })
}

/// (X, V)(s_target) for the characteristic through (t, x, v).
pub fn trace_back<F: ForceField + ?Sized>(field: &F, t: f64, x: &Vec3, v: &Vec3, s_target: f64, dt_ode: f64) -> Result<CharState> {
    if s_target > t {
        return Err(Error::Precondition(format!("s_target = {s_target} exceeds t = {t}")));
    }
    integrate(field, t, x, v, s_target, dt_ode)
}

/// States at each requested stop, visited in the given order starting from (t, x, v).
pub fn trace_path<F: ForceField + ?Sized>(field: &F, t: f64, x: &Vec3, v: &Vec3, stops: &[f64], dt_ode: f64) -> Result<Vec<CharState>> {
    let mut out = Vec::with_capacity(stops.len());
    let mut cur = CharState { s: t, x: *x, v: *v };
    for &s in stops {
        cur = integrate(field, cur.s, &cur.x, &cur.v, s, dt_ode)?;
        out.push(cur);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
struct Full {
    x: Vec3,
    v: Vec3,
    a: Mat3,
    b: Mat3,
    j6: Option<Matrix6<f64>>,
    l: f64,
}

fn full_rhs<F: ForceField + ?Sized>(field: &F, t: f64, s: f64, y: &Full, want_l: bool) -> Full {
    let g = field.gradient(s, &y.x);
    let j6 = y.j6.as_ref().map(|j| {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-g));
        m * j
    });
    Full {
        x: y.v,
        v: -field.field(s, &y.x),
        a: y.b,
        b: -g * y.a,
        j6,
        l: if want_l { -4.0 * PI * (s - t) * field.density(s, &y.x) } else { 0.0 },
    }
}

fn axpy(y: &Full, k: &Full, h: f64) -> Full {
    Full {
        x: y.x + k.x * h,
        v: y.v + k.v * h,
        a: y.a + k.a * h,
        b: y.b + k.b * h,
        j6: y.j6.as_ref().map(|j| j + k.j6.as_ref().unwrap() * h),
        l: y.l + k.l * h,
    }
}

fn integrate_full<F: ForceField + ?Sized>(field: &F, t: f64, y0: Full, s0: f64, s1: f64, dt_ode: f64, want_l: bool) -> Full {
    let n = substeps(s0, s1, dt_ode);
    let mut y = y0;
    let mut s = s0;
    for k in 0..n {
        let h = step_len(s0, s1, dt_ode, k, n);
        let k1 = full_rhs(field, t, s, &y, want_l);
        let k2 = full_rhs(field, t, s + h / 2.0, &axpy(&y, &k1, h / 2.0), want_l);
        let k3 = full_rhs(field, t, s + h / 2.0, &axpy(&y, &k2, h / 2.0), want_l);
        let k4 = full_rhs(field, t, s + h, &axpy(&y, &k3, h), want_l);
        let mut next = axpy(&y, &k1, h / 6.0);
        next = axpy(&next, &k2, h / 3.0);
        next = axpy(&next, &k3, h / 3.0);
        y = axpy(&next, &k4, h / 6.0);
        s = if k + 1 == n { s1 } else { s + h };
    }
    y
}

fn variational_impl<F: ForceField + ?Sized>(
    field: &F,
    t: f64,
    x: &Vec3,
    v: &Vec3,
    s_target: f64,
    dt_ode: f64,
    with_j6: bool,
    want_l: bool,
) -> Result<(CharState, VariationalState)> {
    if s_target > t {
        return Err(Error::Precondition(format!("s_target = {s_target} exceeds t = {t}")));
    }
    check_interval(field, t, s_target, dt_ode)?;
    let term = VariationalState::terminal(with_j6);
    let y0 = Full { x: *x, v: *v, a: term.a, b: term.b, j6: term.j6, l: 0.0 };
    let y = integrate_full(field, t, y0, t, s_target, dt_ode, want_l);
    Ok((CharState { s: s_target, x: y.x, v: y.v }, VariationalState { a: y.a, b: y.b, j6: y.j6, leading: y.l }))
}

/// Characteristic together with 𝔸, 𝔹 (and J6 when requested) at s_target.
/// The blocks satisfy d𝔸/ds = 𝔹, d𝔹/ds = -∇ℰ(s, X) 𝔸 with 𝔸(t) = 0, 𝔹(t) = I.
pub fn trace_variational<F: ForceField + ?Sized>(
    field: &F,
    t: f64,
    x: &Vec3,
    v: &Vec3,
    s_target: f64,
    dt_ode: f64,
    with_j6: bool,
) -> Result<(CharState, VariationalState)> {
    variational_impl(field, t, x, v, s_target, dt_ode, with_j6, false)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DetBExpansion {
    pub det_b: f64,
    /// 4π ∫_0^t (τ - t) ρ(τ, X(τ)) dτ.
    pub leading: f64,
    /// det 𝔹 - 1 - leading.
    pub residual: f64,
}

/// det 𝔹(0) against its first-order expansion along the traced path.
pub fn det_b_expansion<F: ForceField + ?Sized>(field: &F, t: f64, x: &Vec3, v: &Vec3, dt_ode: f64) -> Result<DetBExpansion> {
    if !field.satisfies_gauss_law() {
        return Err(Error::Precondition("det B expansion needs a divergence-free external field".into()));
    }
    let (_, var) = variational_impl(field, t, x, v, 0.0, dt_ode, false, true)?;
    let det_b = var.b.determinant();
    Ok(DetBExpansion { det_b, leading: var.leading, residual: det_b - 1.0 - var.leading })
}

/// Measured constants of the injectivity lemma.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AdmissibilityConstants {
    /// sup |∇ℰ| |x|³ over sampled radii and stored times.
    pub c3: f64,
    /// sup |∂X/∂v| over sampled traces.
    pub c4: f64,
    /// ∫_0^t sup_x |ℰ| dτ.
    pub c5: f64,
    /// Velocity support bound W + c5.
    pub q: f64,
    pub t: f64,
    pub d: f64,
    /// max{8(D + c5 T), 2 T Q, 4 (6 c4 c3 T)^{1/3}}.
    pub c_d: f64,
}

pub fn admissibility_constants(
    history: &FieldHistory,
    background: &BackgroundSpec,
    t: f64,
    d: f64,
    dt_ode: f64,
) -> Result<AdmissibilityConstants> {
    let c5 = history.integrated_sup(t);
    let mut c3: f64 = 0.0;
    let (lo, hi) = history.time_domain();
    let times: Vec<f64> = (0..=8).map(|k| lo + (t.min(hi) - lo) * k as f64 / 8.0).collect();
    let radii: Vec<f64> = (0..=60).map(|k| 10f64.powf(-1.0 + 4.0 * k as f64 / 60.0)).collect();
    for &s in &times {
        for &r in &radii {
            for dir in [Vec3::x(), Vec3::new(0.0, 0.6, 0.8)] {
                let x = dir * r;
                c3 = c3.max(history.gradient(s, &x).norm() * r * r * r);
            }
        }
    }
    let q = background.cutoff + c5;
    let far = (2.0 * t * q).max(1.0) * 2.0;
    let mut c4: f64 = 0.0;
    for k in 0..8 {
        let v = Vec3::new((k as f64 * 0.7).cos(), (k as f64 * 1.3).sin(), 0.3) * (d / 1.2);
        let x = Vec3::new(far, 0.0, 0.0);
        let (_, var) = trace_variational(history, t, &x, &v, 0.0, dt_ode, false)?;
        c4 = c4.max(var.a.norm());
    }
    let c_d = (8.0 * (d + c5 * t)).max(2.0 * t * q).max(4.0 * (6.0 * c4 * c3 * t).cbrt());
    Ok(AdmissibilityConstants { c3, c4, c5, q, t, d, c_d })
}

/// Constants for a field without history (the integrated sup is sup·t).
pub fn admissibility_constants_for(field: &dyn ForceField, background: &BackgroundSpec, t: f64, d: f64) -> AdmissibilityConstants {
    let c5 = field.sup_norm(t) * t;
    let q = background.cutoff + c5;
    let c4 = 3f64.sqrt() * t;
    let c_d = (8.0 * (d + c5 * t)).max(2.0 * t * q);
    AdmissibilityConstants { c3: 0.0, c4, c5, q, t, d, c_d }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub x: [f64; 3],
    pub t: f64,
    pub d: f64,
    pub samples: usize,
    pub seed: u64,
    pub min_ratio: f64,
    #[serde(rename = "min_detB")]
    pub min_det_b: f64,
    /// Pairs whose ratio fell below 1/2.
    pub contraction_violations: usize,
    pub admissibility_radius: f64,
}

impl ProbeReport {
    pub fn injective_evidence(&self) -> bool {
        self.contraction_violations == 0 && self.min_det_b > 0.0
    }
}

fn random_in_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

/// Pairwise ratios |V(0, v_i) - V(0, v_j)| / |v_i - v_j| over seeded samples in B(0, D).
pub fn injectivity_probe<F: ForceField + ?Sized>(
    field: &F,
    t: f64,
    x: &Vec3,
    d: f64,
    n_samples: usize,
    seed: u64,
    dt_ode: f64,
    admissibility_radius: f64,
) -> Result<ProbeReport> {
    if n_samples < 2 {
        return Err(Error::Precondition("the probe needs at least two samples".into()));
    }
    if x.norm() <= admissibility_radius {
        return Err(Error::Inadmissible { norm: x.norm(), radius: admissibility_radius });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vs: Vec<Vec3> = (0..n_samples).map(|_| random_in_ball(&mut rng, d)).collect();
    let traced = par::map_indexed(n_samples, |i| trace_variational(field, t, x, &vs[i], 0.0, dt_ode, false));
    let mut ends = Vec::with_capacity(n_samples);
    let mut min_det_b = f64::INFINITY;
    for r in traced {
        let (c, var) = r?;
        min_det_b = min_det_b.min(var.b.determinant());
        ends.push(c.v);
    }
    let mut min_ratio = f64::INFINITY;
    let mut violations = 0;
    for i in 0..n_samples {
        for j in i + 1..n_samples {
            let dv = (vs[i] - vs[j]).norm();
            if dv == 0.0 {
                continue;
            }
            let ratio = (ends[i] - ends[j]).norm() / dv;
            min_ratio = min_ratio.min(ratio);
            if ratio < 0.5 {
                violations += 1;
            }
        }
    }
    Ok(ProbeReport {
        x: (*x).into(),
        t,
        d,
        samples: n_samples,
        seed,
        min_ratio,
        min_det_b,
        contraction_violations: violations,
        admissibility_radius,
    })
}

/// Velocity-ball quadrature layout: Gauss-Legendre panels in u split at the
/// cutoff, Gauss-Legendre in the cosine to x, trapezoid in azimuth.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CovQuadrature {
    pub u_max: f64,
    pub n_u: usize,
    pub n_mu: usize,
    pub n_phi: usize,
}

impl Default for CovQuadrature {
    fn default() -> Self {
        Self { u_max: 2.0, n_u: 16, n_mu: 16, n_phi: 8 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CovReport {
    pub x: [f64; 3],
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub relerr: f64,
    #[serde(rename = "min_detB")]
    pub min_det_b: f64,
}

/// ∫ F(V(0, t, x, v)) det 𝔹 dv against ∫ F(w) dw.
pub fn change_of_variables_check<F: ForceField + ?Sized>(
    field: &F,
    background: &BackgroundSpec,
    t: f64,
    x: &Vec3,
    quad: &CovQuadrature,
    dt_ode: f64,
) -> Result<CovReport> {
    let w = background.cutoff;
    let mut u_nodes = Vec::new();
    let mut u_weights = Vec::new();
    let mut edges = vec![0.0];
    if quad.u_max > w {
        edges.push(w);
    }
    edges.push(quad.u_max);
    for e in edges.windows(2) {
        let (n, wt) = gauss_legendre_on(quad.n_u, e[0], e[1]);
        u_nodes.extend(n);
        u_weights.extend(wt);
    }
    let (mu, mu_w) = gauss_legendre(quad.n_mu);
    let axis = if x.norm() > 0.0 { x.normalize() } else { Vec3::x() };
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    let dphi = 2.0 * PI / quad.n_phi as f64;
    let n = u_nodes.len() * mu.len() * quad.n_phi;
    let per_point = par::map_indexed(n, |idx| -> Result<(f64, f64)> {
        let p = idx % quad.n_phi;
        let k = (idx / quad.n_phi) % mu.len();
        let j = idx / (quad.n_phi * mu.len());
        let (u, c) = (u_nodes[j], mu[k]);
        let sn = (1.0 - c * c).sqrt();
        let phi = p as f64 * dphi;
        let v = (axis * c + (e1 * phi.cos() + e2 * phi.sin()) * sn) * u;
        let (end, var) = trace_variational(field, t, x, &v, 0.0, dt_ode, false)?;
        let det = var.b.determinant();
        let weight = u_weights[j] * mu_w[k] * dphi * u * u;
        Ok((weight * background.eval_vec(&end.v) * det, det))
    });
    let mut lhs = 0.0;
    let mut min_det_b = f64::INFINITY;
    for r in per_point {
        let (contrib, det) = r?;
        if det <= 0.0 {
            return Err(Error::NonPositiveJacobian { det, v: [0.0; 3] });
        }
        lhs += contrib;
        min_det_b = min_det_b.min(det);
    }
    let rhs = background.total_mass();
    Ok(CovReport { x: (*x).into(), t, lhs, rhs, relerr: (lhs - rhs).abs() / rhs, min_det_b })
}
