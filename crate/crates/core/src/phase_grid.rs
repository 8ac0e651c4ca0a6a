//! Reduced (r, u, μ) phase-space grid and the deviation state stored on it.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interp::{hermite_value, pchip_slopes};
use crate::model::BackgroundSpec;
use crate::quadrature::{gauss_legendre, simpson_weights};
use crate::Vec3;

/// (|x|, |v|, cos angle(x, v)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReducedCoords {
    pub r: f64,
    pub u: f64,
    pub mu: f64,
}

impl ReducedCoords {
    pub fn new(r: f64, u: f64, mu: f64) -> Self {
        Self { r, u, mu }
    }
}

/// Canonical representative x = (r, 0, 0), v = (uμ, u sqrt(1 - μ²), 0).
pub fn lift(c: ReducedCoords) -> (Vec3, Vec3) {
    let s = (1.0 - c.mu * c.mu).max(0.0).sqrt();
    (Vec3::new(c.r, 0.0, 0.0), Vec3::new(c.u * c.mu, c.u * s, 0.0))
}

/// Inverse of [`lift`]; μ = 1 when r = 0 or u = 0.
pub fn project(x: &Vec3, v: &Vec3) -> ReducedCoords {
    let r = x.norm();
    let u = v.norm();
    let mu = if r > 0.0 && u > 0.0 { (x.dot(v) / (r * u)).clamp(-1.0, 1.0) } else { 1.0 };
    ReducedCoords { r, u, mu }
}

/// Radial nodes: uniform on [0, 1], geometric on [1, r_max].
#[derive(Clone, Debug, Serialize)]
pub struct RadialAxis {
    pub nodes: Vec<f64>,
    n_inner: usize,
    ratio: f64,
}

impl RadialAxis {
    pub fn new(n: usize, n_inner: usize, r_max: f64) -> Result<Self> {
        if n_inner < 2 || n_inner >= n {
            return Err(Error::InvalidGrid(format!("inner node count {n_inner} must lie in [2, n_r = {n})")));
        }
        if !(r_max > 1.0 && r_max.is_finite()) {
            return Err(Error::InvalidGrid(format!("r_max = {r_max} must exceed 1")));
        }
        let n_geo = n - n_inner;
        let ratio = r_max.powf(1.0 / n_geo as f64);
        let mut nodes = Vec::with_capacity(n);
        let h = 1.0 / (n_inner - 1) as f64;
        for i in 0..n_inner {
            nodes.push(i as f64 * h);
        }
        for k in 1..=n_geo {
            nodes.push(ratio.powi(k as i32));
        }
        nodes[n - 1] = r_max;
        Ok(Self { nodes, n_inner, ratio })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn r_max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Interval index i with nodes[i] <= r < nodes[i+1], clamped to the axis.
    pub fn locate(&self, r: f64) -> usize {
        let n = self.nodes.len();
        let mut i = if r <= 1.0 {
            ((r * (self.n_inner - 1) as f64) as usize).min(self.n_inner - 2)
        } else {
            self.n_inner - 1 + (r.ln() / self.ratio.ln()) as usize
        };
        i = i.min(n - 2);
        while i > 0 && self.nodes[i] > r {
            i -= 1;
        }
        while i + 2 < n && self.nodes[i + 1] <= r {
            i += 1;
        }
        i
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridConfig {
    pub n_r: usize,
    pub n_u: usize,
    pub n_mu: usize,
    pub r_max: f64,
    pub u_max: f64,
    /// Uniform nodes on [0, 1]; defaults to n_r / 4.
    pub n_r_inner: Option<usize>,
    /// When set, the u spacing is adjusted so this speed falls on a node.
    pub align_speed: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_r: 128,
            n_u: 32,
            n_mu: 16,
            r_max: 1000.0,
            u_max: 1.55,
            n_r_inner: None,
            align_speed: Some(1.0),
        }
    }
}

/// Immutable discretisation of the reduced domain with quadrature weights.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseGrid {
    pub r: RadialAxis,
    pub u_nodes: Vec<f64>,
    pub mu_nodes: Vec<f64>,
    #[serde(skip)]
    pub u_weights: Vec<f64>,
    #[serde(skip)]
    pub mu_weights: Vec<f64>,
    pub du: f64,
}

impl PhaseGrid {
    pub fn n_r(&self) -> usize {
        self.r.len()
    }
    pub fn n_u(&self) -> usize {
        self.u_nodes.len()
    }
    pub fn n_mu(&self) -> usize {
        self.mu_nodes.len()
    }
    pub fn len(&self) -> usize {
        self.n_r() * self.n_u() * self.n_mu()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn u_max(&self) -> f64 {
        self.u_nodes[self.u_nodes.len() - 1]
    }
    pub fn r_max(&self) -> f64 {
        self.r.r_max()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_u() + j) * self.n_mu() + k
    }

    /// Inverse of [`PhaseGrid::index`].
    #[inline]
    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let nm = self.n_mu();
        let nu = self.n_u();
        (idx / (nu * nm), (idx / nm) % nu, idx % nm)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> ReducedCoords {
        let (i, j, k) = self.unindex(idx);
        ReducedCoords { r: self.r.nodes[i], u: self.u_nodes[j], mu: self.mu_nodes[k] }
    }
}

pub fn build_grid(config: &GridConfig) -> Result<PhaseGrid> {
    for (name, n) in [("n_r", config.n_r), ("n_u", config.n_u), ("n_mu", config.n_mu)] {
        if n < 4 {
            return Err(Error::InvalidGrid(format!("{name} = {n} must be at least 4")));
        }
    }
    if !(config.u_max > 0.0 && config.u_max.is_finite()) {
        return Err(Error::InvalidGrid(format!("u_max = {} must be positive", config.u_max)));
    }
    let n_inner = config.n_r_inner.unwrap_or((config.n_r / 4).max(2));
    let r = RadialAxis::new(config.n_r, n_inner, config.r_max)?;
    let intervals = (config.n_u - 1) as f64;
    let mut du = config.u_max / intervals;
    if let Some(w) = config.align_speed {
        if !(w > 0.0 && w < config.u_max) {
            return Err(Error::InvalidGrid(format!("aligned speed {w} must lie in (0, u_max)")));
        }
        // even index keeps w on a Simpson panel boundary
        let j = (2.0 * (w / (2.0 * du)).round()).max(2.0);
        du = w / j;
    }
    let u_nodes: Vec<f64> = (0..config.n_u).map(|j| j as f64 * du).collect();
    let (mu_nodes, mu_weights) = gauss_legendre(config.n_mu);
    let u_weights = simpson_weights(config.n_u, du);
    Ok(PhaseGrid { r, u_nodes, mu_nodes, u_weights, mu_weights, du })
}

/// Extension of g beyond r_max: g(r_max)·(r_max/r)^e; e = ∞ means zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailRule {
    pub exponent: f64,
}

impl Default for TailRule {
    fn default() -> Self {
        Self { exponent: 2.0 }
    }
}

impl TailRule {
    #[inline]
    pub fn factor(&self, r_max: f64, r: f64) -> f64 {
        if self.exponent.is_infinite() {
            0.0
        } else if self.exponent == 0.0 {
            1.0
        } else {
            (r_max / r).powf(self.exponent)
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BoundReport {
    pub nodes: usize,
    pub violations: usize,
    pub min_f: f64,
    pub max_f: f64,
}

impl BoundReport {
    pub fn fraction(&self) -> f64 {
        if self.nodes == 0 {
            0.0
        } else {
            self.violations as f64 / self.nodes as f64
        }
    }
}

/// g = F - f on the grid at time t, with cached PCHIP slopes along r.
#[derive(Clone, Debug)]
pub struct DeviationState {
    pub t: f64,
    pub grid: Arc<PhaseGrid>,
    pub g: Vec<f64>,
    pub tail: TailRule,
    slopes: Vec<f64>,
}

impl DeviationState {
    pub fn new(t: f64, grid: Arc<PhaseGrid>, g: Vec<f64>, tail: TailRule) -> Result<Self> {
        if g.len() != grid.len() {
            return Err(Error::InvalidGrid(format!("{} values for {} nodes", g.len(), grid.len())));
        }
        let slopes = radial_slopes(&grid, &g);
        Ok(Self { t, grid, g, tail, slopes })
    }

    pub fn zeros(t: f64, grid: Arc<PhaseGrid>) -> Self {
        let n = grid.len();
        Self { t, grid, g: vec![0.0; n], tail: TailRule::default(), slopes: vec![0.0; n] }
    }

    /// Fill from a function of reduced coordinates.
    pub fn from_fn(t: f64, grid: Arc<PhaseGrid>, tail: TailRule, f: impl Fn(ReducedCoords) -> f64) -> Self {
        let g: Vec<f64> = (0..grid.len()).map(|idx| f(grid.coords(idx))).collect();
        let slopes = radial_slopes(&grid, &g);
        Self { t, grid, g, tail, slopes }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.g[self.grid.index(i, j, k)]
    }

    /// Interpolated g; u above u_max is rejected, as is μ outside [-1, 1].
    pub fn sample(&self, c: ReducedCoords) -> Result<f64> {
        let grid = &*self.grid;
        if !(c.u >= 0.0 && c.u <= grid.u_max() * (1.0 + 1e-12)) {
            return Err(Error::OutOfDomain(format!("u = {} outside [0, {}]", c.u, grid.u_max())));
        }
        if !(c.mu.abs() <= 1.0 + 1e-12) || !(c.r >= 0.0) {
            return Err(Error::OutOfDomain(format!("r = {}, mu = {} outside the reduced domain", c.r, c.mu)));
        }
        Ok(self.sample_unchecked(c))
    }

    /// Same as [`DeviationState::sample`] without the domain check; u is clamped.
    pub fn sample_unchecked(&self, c: ReducedCoords) -> f64 {
        let grid = &*self.grid;
        let r_max = grid.r_max();
        let (r, tail) = if c.r > r_max { (r_max, self.tail.factor(r_max, c.r)) } else { (c.r, 1.0) };
        if tail == 0.0 {
            return 0.0;
        }

        let nu = grid.n_u();
        let uf = (c.u / grid.du).clamp(0.0, (nu - 1) as f64);
        let j = (uf as usize).min(nu - 2);
        let su = uf - j as f64;

        let mu = &grid.mu_nodes;
        let nm = mu.len();
        let k = mu.partition_point(|&m| m <= c.mu).clamp(1, nm - 1) - 1;
        let sm = (c.mu - mu[k]) / (mu[k + 1] - mu[k]);

        let i = grid.r.locate(r);
        let r0 = grid.r.nodes[i];
        let h = grid.r.nodes[i + 1] - r0;
        let sr = (r - r0).clamp(0.0, h);
        let stride = nu * nm;

        let mut acc = 0.0;
        for (dj, wu) in [(0usize, 1.0 - su), (1, su)] {
            if wu == 0.0 {
                continue;
            }
            for (dk, wm) in [(0usize, 1.0 - sm), (1, sm)] {
                let a = grid.index(i, j + dj, k + dk);
                let b = a + stride;
                let v = hermite_value(h, self.g[a], self.g[b], self.slopes[a], self.slopes[b], sr);
                acc += wu * wm * v;
            }
        }
        acc * tail
    }

    /// Walk all nodes and count f = F - g outside [-tol, sup_f0 + tol].
    pub fn bound_check(&self, background: &BackgroundSpec, sup_f0: f64, tol: f64) -> BoundReport {
        let grid = &*self.grid;
        let mut rep = BoundReport { nodes: self.g.len(), violations: 0, min_f: f64::INFINITY, max_f: f64::NEG_INFINITY };
        for (idx, &g) in self.g.iter().enumerate() {
            let (_, j, _) = grid.unindex(idx);
            let f = background.eval(grid.u_nodes[j]) - g;
            rep.min_f = rep.min_f.min(f);
            rep.max_f = rep.max_f.max(f);
            if !(f >= -tol && f <= sup_f0 + tol) {
                rep.violations += 1;
            }
        }
        rep
    }

    /// Delimited dump with header (r, u, mu, g) in node-major order.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "r,u,mu,g")?;
        for idx in 0..self.g.len() {
            let c = self.grid.coords(idx);
            writeln!(out, "{},{},{},{}", c.r, c.u, c.mu, self.g[idx])?;
        }
        Ok(())
    }
}

pub fn sample_g(state: &DeviationState, c: ReducedCoords) -> Result<f64> {
    state.sample(c)
}

fn radial_slopes(grid: &PhaseGrid, g: &[f64]) -> Vec<f64> {
    let nr = grid.n_r();
    let stride = grid.n_u() * grid.n_mu();
    let mut slopes = vec![0.0; g.len()];
    let mut line = vec![0.0; nr];
    for off in 0..stride {
        for i in 0..nr {
            line[i] = g[i * stride + off];
        }
        let d = pchip_slopes(&grid.r.nodes, &line);
        for i in 0..nr {
            slopes[i * stride + off] = d[i];
        }
    }
    slopes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<PhaseGrid> {
        Arc::new(build_grid(&GridConfig::default()).unwrap())
    }

    #[test]
    fn default_grid_shape() {
        let g = grid();
        assert_eq!(g.len(), 128 * 32 * 16);
        assert_eq!(g.r.nodes[0], 0.0);
        assert_eq!(g.r_max(), 1000.0);
        let tail = &g.r.nodes[40..];
        let q0 = tail[1] / tail[0];
        for w in tail.windows(2) {
            assert!((w[1] / w[0] - q0).abs() < 1e-12);
        }
        assert!(g.u_nodes.iter().any(|&u| u == 1.0));
        for k in 0..16 {
            assert!((g.mu_nodes[k] + g.mu_nodes[15 - k]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_degenerate_axes() {
        let mut c = GridConfig { n_u: 3, ..Default::default() };
        assert!(build_grid(&c).is_err());
        c.n_u = 32;
        c.r_max = 0.5;
        assert!(build_grid(&c).is_err());
    }

    #[test]
    fn locate_is_consistent() {
        let g = grid();
        let nodes = &g.r.nodes;
        for &r in &[0.0, 1e-3, 0.5, 0.99999, 1.0, 1.0001, 3.7, 99.0, 999.9, 1000.0] {
            let i = g.r.locate(r);
            assert!(nodes[i] <= r && (r < nodes[i + 1] || i == nodes.len() - 2), "r = {r}");
        }
        for (i, &r) in nodes.iter().enumerate().take(nodes.len() - 1) {
            assert_eq!(g.r.locate(r), i);
        }
    }

    #[test]
    fn lift_and_project() {
        let (x, v) = lift(ReducedCoords::new(1.0, 1.0, 1.0));
        assert_eq!(x, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(v, Vec3::new(1.0, 0.0, 0.0));
        let c = project(&Vec3::new(0.0, 3.0, 0.0), &Vec3::new(0.0, 0.0, 2.0));
        assert_eq!((c.r, c.u, c.mu), (3.0, 2.0, 0.0));
        assert_eq!(project(&Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0)).mu, 1.0);
        for k in 0..50 {
            let c = ReducedCoords::new(0.1 + k as f64, 0.05 + 0.03 * k as f64, -0.98 + 0.04 * k as f64);
            let (x, v) = lift(c);
            let d = project(&x, &v);
            assert!((d.r - c.r).abs() < 1e-14 * c.r.max(1.0));
            assert!((d.u - c.u).abs() < 1e-14);
            assert!((d.mu - c.mu).abs() < 1e-14);
        }
    }

    #[test]
    fn sample_reproduces_nodes_and_constants() {
        let g = grid();
        let st = DeviationState::from_fn(0.0, g.clone(), TailRule::default(), |c| c.r.sin() + c.u * c.mu);
        for &idx in &[0usize, 17, 5000, 33333, g.len() - 1] {
            let c = g.coords(idx);
            assert_eq!(st.sample(c).unwrap(), st.g[idx]);
        }
        let k = DeviationState::from_fn(0.0, g.clone(), TailRule::default(), |_| 0.75);
        for c in [ReducedCoords::new(0.33, 0.41, 0.2), ReducedCoords::new(57.0, 1.2, -0.99), ReducedCoords::new(2.0, 0.0, 1.0)] {
            assert!((k.sample(c).unwrap() - 0.75).abs() < 1e-14);
        }
    }

    #[test]
    fn tail_rule() {
        let g = grid();
        let st = DeviationState::from_fn(0.0, g.clone(), TailRule::default(), |_| 2.0);
        let c = ReducedCoords::new(2000.0, 0.5, 0.1);
        assert!((st.sample(c).unwrap() - 0.5).abs() < 1e-14);
        let flat = DeviationState { tail: TailRule { exponent: 0.0 }, ..st.clone() };
        assert!((flat.sample(c).unwrap() - 2.0).abs() < 1e-14);
        let zero = DeviationState { tail: TailRule { exponent: f64::INFINITY }, ..st.clone() };
        assert_eq!(zero.sample(c).unwrap(), 0.0);
        assert!(st.sample(ReducedCoords::new(1.0, 2.0, 0.0)).is_err());
        assert!(st.sample(ReducedCoords::new(1.0, 0.5, 1.5)).is_err());
    }

    fn max_error(n_r: usize, n_u: usize, n_mu: usize, f: &dyn Fn(ReducedCoords) -> f64) -> f64 {
        let cfg = GridConfig { n_r, n_u, n_mu, r_max: 10.0, u_max: 2.0, n_r_inner: Some(n_r / 2), align_speed: None };
        let g = Arc::new(build_grid(&cfg).unwrap());
        let st = DeviationState::from_fn(0.0, g, TailRule::default(), f);
        let mut err: f64 = 0.0;
        for a in 0..23 {
            for b in 0..7 {
                for m in 0..5 {
                    let c = ReducedCoords::new(0.05 + 0.4 * a as f64, 0.1 + 0.25 * b as f64, -0.7 + 0.33 * m as f64);
                    err = err.max((st.sample(c).unwrap() - f(c)).abs());
                }
            }
        }
        err
    }

    #[test]
    fn interpolation_orders() {
        let fr = |c: ReducedCoords| (-0.3 * c.r).exp() * (1.0 + 0.2 * c.r).sin();
        let e1 = max_error(32, 8, 8, &fr);
        let e2 = max_error(64, 8, 8, &fr);
        assert!((e1 / e2).log2() >= 2.8, "r order {}", (e1 / e2).log2());

        let fu = |c: ReducedCoords| (1.3 * c.u).sin() * (0.7 * c.mu).cos();
        let e1 = max_error(16, 16, 16, &fu);
        let e2 = max_error(16, 32, 32, &fu);
        assert!((e1 / e2).log2() >= 1.0, "u/mu order {}", (e1 / e2).log2());
    }

    #[test]
    fn bound_check_counts_violations() {
        let g = grid();
        let bg = BackgroundSpec::default();
        let ok = DeviationState::zeros(0.0, g.clone());
        assert_eq!(ok.bound_check(&bg, 1.0, 1e-12).violations, 0);
        let mut bad = ok.clone();
        bad.g[0] = 2.0;
        bad.g[1] = -0.5;
        assert_eq!(bad.bound_check(&bg, 1.0, 1e-12).violations, 2);
    }

    #[test]
    fn snapshot_format() {
        let cfg = GridConfig { n_r: 8, n_u: 4, n_mu: 4, r_max: 10.0, u_max: 1.5, n_r_inner: None, align_speed: None };
        let g = Arc::new(build_grid(&cfg).unwrap());
        let st = DeviationState::zeros(0.0, g);
        let mut buf = Vec::new();
        st.write_snapshot(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("r,u,mu,g\n"));
        assert_eq!(text.lines().count(), 1 + 8 * 4 * 4);
    }
}
