//! Norms, tail-exponent fits, boundedness monitors and the four-term split
//! of the velocity-averaged source integral.

use std::f64::consts::PI;

use serde::Serialize;

use crate::characteristics::{trace_back, ForceField};
use crate::error::{Error, Result};
use crate::field::{envelope_check, EnvelopeReport, RadialFieldSnapshot};
use crate::model::{weight_r, BackgroundSpec};
use crate::phase_grid::DeviationState;
use crate::quadrature::{gauss_legendre, gauss_legendre_on};
use crate::{par, Vec3};

/// Values below this magnitude are left out of exponent fits.
pub const FIT_FLOOR: f64 = 1e-14;
/// Minimum number of usable radii for a fit.
pub const FIT_MIN_POINTS: usize = 8;

/// max_i |values_i| (1 + r_i²)^{a/2}.
pub fn weighted_sup(r: &[f64], values: &[f64], a: f64) -> f64 {
    r.iter()
        .zip(values)
        .map(|(&r, &v)| v.abs() * weight_r(r).powf(a))
        .fold(0.0, f64::max)
}

/// Largest speed node where max_{r,μ} |g| exceeds `threshold`, never below W.
pub fn velocity_support(state: &DeviationState, background: &BackgroundSpec, threshold: f64) -> f64 {
    let grid = &state.grid;
    let (n_r, n_u, n_mu) = (grid.n_r(), grid.n_u(), grid.n_mu());
    let mut q = background.cutoff;
    for j in (0..n_u).rev() {
        let u = grid.u_nodes[j];
        if u <= q {
            break;
        }
        let hit = (0..n_r).any(|i| (0..n_mu).any(|k| state.at(i, j, k).abs() > threshold));
        if hit {
            q = u;
            break;
        }
    }
    q
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub r_lo: f64,
    pub r_hi: f64,
    /// Reported decay exponent: minus the log-log slope.
    pub exponent: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub points: usize,
}

/// Least-squares fit of log|ρ| against log r over [r_lo, r_hi].
pub fn fit_tail_exponent(r: &[f64], rho: &[f64], window: (f64, f64)) -> Result<ExponentFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidConfig(format!("fit window [{lo}, {hi}] is not a positive interval")));
    }
    let pts: Vec<(f64, f64)> = r
        .iter()
        .zip(rho)
        .filter(|(&r, &v)| r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12) && v.abs() > FIT_FLOOR)
        .map(|(&r, &v)| (r.ln(), v.abs().ln()))
        .collect();
    if pts.len() < FIT_MIN_POINTS {
        return Err(Error::InsufficientPoints { needed: FIT_MIN_POINTS, found: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(ExponentFit { r_lo: lo, r_hi: hi, exponent: -slope, intercept, residual_rms: (rss / n).sqrt(), points: pts.len() })
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticOptions {
    pub p: f64,
    pub q: f64,
    pub fit_window: (f64, f64),
    /// |g| level treated as zero for the velocity support.
    pub support_threshold: f64,
    /// Radii at or above this count as tail for the |g| r² monitor.
    pub tail_radius: f64,
}

impl Default for DiagnosticOptions {
    fn default() -> Self {
        Self { p: 3.5, q: 16.0, fit_window: (100.0, 1000.0), support_threshold: 1e-10, tail_radius: 100.0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub t: f64,
    pub rho_sup: f64,
    /// sup |ρ| R^p with the configured p.
    pub rho_norm_p: f64,
    pub rho_norm_4: f64,
    pub rho_norm_6: f64,
    /// sup |g| (1 + r² + u^q).
    pub g_norm_q: f64,
    /// Same weight on |∇_x g|.
    pub grad_x_g_norm_q: f64,
    /// Same weight on |∇_v g|.
    pub grad_v_g_norm_q: f64,
    /// g_norm_q + max(grad_x, grad_v) + rho_norm_p.
    pub triple: f64,
    /// Instantaneous velocity support.
    pub q_now: f64,
    /// Running maximum of the velocity support.
    pub q_t: f64,
    pub m_sup: f64,
    /// sup r⁴ |ρ|.
    pub p_t: f64,
    /// ‖ρ‖_6.
    pub psi_t: f64,
    pub fit: Option<ExponentFit>,
    /// sup over tail nodes of |g| r².
    pub g_tail_r2: f64,
    pub envelope: EnvelopeReport,
}

impl NormReport {
    /// All norms of one state and its field snapshot. `prev_q` is the
    /// running velocity-support maximum so far (use W at t = 0).
    pub fn compute(
        state: &DeviationState,
        snapshot: &RadialFieldSnapshot,
        background: &BackgroundSpec,
        opts: &DiagnosticOptions,
        prev_q: f64,
    ) -> Self {
        let r = snapshot.r();
        let rho = &snapshot.rho;
        let rho_sup = rho.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let rho_norm_p = weighted_sup(r, rho, opts.p);
        let rho_norm_4 = weighted_sup(r, rho, 4.0);
        let rho_norm_6 = weighted_sup(r, rho, 6.0);
        let m_sup = snapshot.m.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let p_t = r.iter().zip(rho).map(|(&r, &v)| r.powi(4) * v.abs()).fold(0.0, f64::max);
        let (g_norm_q, gx, gv, g_tail_r2) = deviation_norms(state, opts);
        let q_now = velocity_support(state, background, opts.support_threshold);
        let fit = fit_tail_exponent(r, rho, opts.fit_window).ok();
        Self {
            t: state.t,
            rho_sup,
            rho_norm_p,
            rho_norm_4,
            rho_norm_6,
            g_norm_q,
            grad_x_g_norm_q: gx,
            grad_v_g_norm_q: gv,
            triple: g_norm_q + gx.max(gv) + rho_norm_p,
            q_now,
            q_t: q_now.max(prev_q),
            m_sup,
            p_t,
            psi_t: rho_norm_6,
            fit,
            g_tail_r2,
            envelope: envelope_check(snapshot),
        }
    }

    pub fn fit_exponent(&self) -> f64 {
        self.fit.as_ref().map_or(f64::NAN, |f| f.exponent)
    }
}

/// Derivative along an axis: central in the interior, one-sided at the ends.
#[inline]
fn axis_derivative(nodes: &[f64], at: impl Fn(usize) -> f64, i: usize) -> f64 {
    let n = nodes.len();
    let (a, b) = if i == 0 {
        (0, 1)
    } else if i == n - 1 {
        (n - 2, n - 1)
    } else {
        (i - 1, i + 1)
    };
    (at(b) - at(a)) / (nodes[b] - nodes[a])
}

/// (weighted g norm, weighted |∇_x g|, weighted |∇_v g|, tail |g| r²).
///
/// For g(r, u, μ) with μ = x·v/(ru):
/// |∇_x g|² = g_r² + (1 - μ²) g_μ²/r² and |∇_v g|² = g_u² + (1 - μ²) g_μ²/u².
fn deviation_norms(state: &DeviationState, opts: &DiagnosticOptions) -> (f64, f64, f64, f64) {
    let grid = &state.grid;
    let (n_r, n_u, n_mu) = (grid.n_r(), grid.n_u(), grid.n_mu());
    let rn = &grid.r.nodes;
    let per_r = par::map_indexed(n_r, |i| {
        let r = rn[i];
        let mut acc = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for j in 0..n_u {
            let u = grid.u_nodes[j];
            let w = 1.0 + r * r + u.powf(opts.q);
            for k in 0..n_mu {
                let mu = grid.mu_nodes[k];
                let g = state.at(i, j, k);
                let g_r = axis_derivative(rn, |ii| state.at(ii, j, k), i);
                let g_u = axis_derivative(&grid.u_nodes, |jj| state.at(i, jj, k), j);
                let g_mu = axis_derivative(&grid.mu_nodes, |kk| state.at(i, j, kk), k);
                let s2 = 1.0 - mu * mu;
                let ang_x = if r > 0.0 { s2 * (g_mu / r).powi(2) } else { 0.0 };
                let ang_v = if u > 0.0 { s2 * (g_mu / u).powi(2) } else { 0.0 };
                acc.0 = acc.0.max(g.abs() * w);
                acc.1 = acc.1.max((g_r * g_r + ang_x).sqrt() * w);
                acc.2 = acc.2.max((g_u * g_u + ang_v).sqrt() * w);
                if r >= opts.tail_radius {
                    acc.3 = acc.3.max(g.abs() * r * r);
                }
            }
        }
        acc
    });
    per_r.into_iter().fold((0.0, 0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2), a.3.max(b.3)))
}

#[derive(Clone, Debug, Serialize)]
pub struct GronwallVerdict {
    pub name: String,
    pub initial: f64,
    pub max: f64,
    /// max / initial; 1 when the series is identically zero.
    pub ratio: f64,
    /// Least-squares slope of ln(value) against t.
    pub growth_rate: f64,
    pub bounded: bool,
}

/// Boundedness verdict for one monitored series: the max/initial ratio must
/// stay under `ceiling` and the fitted exponential rate over the span must
/// not by itself account for more than that factor.
pub fn gronwall_verdict(name: &str, t: &[f64], values: &[f64], ceiling: f64) -> GronwallVerdict {
    let initial = values.first().copied().unwrap_or(0.0).abs();
    let max = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let ratio = if max == 0.0 {
        1.0
    } else if initial == 0.0 {
        f64::INFINITY
    } else {
        max / initial
    };
    let pts: Vec<(f64, f64)> = t.iter().zip(values).filter(|(_, v)| v.abs() > 0.0).map(|(&t, v)| (t, v.abs().ln())).collect();
    let growth_rate = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        if stt > 0.0 {
            sty / stt
        } else {
            0.0
        }
    } else {
        0.0
    };
    let span = match (t.first(), t.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    let bounded = ratio <= ceiling && growth_rate * span <= ceiling.ln();
    GronwallVerdict { name: name.to_string(), initial, max, ratio, growth_rate, bounded }
}

/// Verdicts for m_sup, P_t, Ψ_t, ‖ρ‖_p and ‖ρ‖_4 over a run.
pub fn gronwall_monitor(series: &[NormReport], ceiling: f64) -> Result<Vec<GronwallVerdict>> {
    if series.len() < 2 {
        return Err(Error::InsufficientPoints { needed: 2, found: series.len() });
    }
    let t: Vec<f64> = series.iter().map(|r| r.t).collect();
    let pick = |f: fn(&NormReport) -> f64| series.iter().map(f).collect::<Vec<f64>>();
    Ok(vec![
        gronwall_verdict("m_sup", &t, &pick(|r| r.m_sup), ceiling),
        gronwall_verdict("P_t", &t, &pick(|r| r.p_t), ceiling),
        gronwall_verdict("Psi_t", &t, &pick(|r| r.psi_t), ceiling),
        gronwall_verdict("rho_norm_p", &t, &pick(|r| r.rho_norm_p), ceiling),
        gronwall_verdict("rho_norm_4", &t, &pick(|r| r.rho_norm_4), ceiling),
    ])
}

/// Velocity-ball quadrature for the decomposition: Gauss-Legendre in speed
/// (panels split at W), Gauss-Legendre in the polar cosine about x̂,
/// uniform in azimuth.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BallQuadrature {
    pub n_u: usize,
    pub n_mu: usize,
    pub n_phi: usize,
}

impl Default for BallQuadrature {
    fn default() -> Self {
        Self { n_u: 16, n_mu: 16, n_phi: 8 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Decomposition {
    pub x: [f64; 3],
    pub t: f64,
    pub s: f64,
    /// Radius of the velocity ball.
    pub q: f64,
    /// ∫ ℰ(s, X(s))·∇F(V(s)) dv.
    pub total: f64,
    /// ∫ ℰ(s, X(s))·(∇F(V(s)) - ∇F(v)) dv.
    pub term_i: f64,
    /// ∫ (ℰ(s, X(s)) - ℰ(s, y))·∇F(v) dv with y = x + (s - t)v.
    pub term_ii: f64,
    /// ∫ ∇_v·(F(v) ℰ(s, y)) dv.
    pub term_iii: f64,
    /// ∫ F(v) ∇_v·ℰ(s, y) dv.
    pub term_iv: f64,
    /// total - (I + II + III - IV).
    pub closure: f64,
}

/// Evaluate the four terms at (t, x) for an intermediate time s, integrating
/// over |v| ≤ q. Requires |x| ≥ 8 q t.
#[allow(clippy::too_many_arguments)]
pub fn field_integral_decomposition<F: ForceField + ?Sized>(
    field: &F,
    background: &BackgroundSpec,
    t: f64,
    s: f64,
    x: &Vec3,
    q: f64,
    quad: &BallQuadrature,
    dt_ode: f64,
) -> Result<Decomposition> {
    let radius = 8.0 * q * t;
    if x.norm() < radius {
        return Err(Error::Inadmissible { norm: x.norm(), radius });
    }
    if !(0.0..=t).contains(&s) {
        return Err(Error::Precondition(format!("intermediate time {s} outside [0, {t}]")));
    }
    let w = background.cutoff;
    let mut u_nodes = Vec::new();
    let mut u_weights = Vec::new();
    let mut edges = vec![0.0, w.min(q)];
    if q > w {
        edges.push(q);
    }
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
    let parts = par::map_indexed(n, |idx| -> Result<[f64; 5]> {
        let p = idx % quad.n_phi;
        let k = (idx / quad.n_phi) % mu.len();
        let j = idx / (quad.n_phi * mu.len());
        let (u, c) = (u_nodes[j], mu[k]);
        let sn = (1.0 - c * c).sqrt();
        let phi = (p as f64 + 0.5) * dphi;
        let v = (axis * c + (e1 * phi.cos() + e2 * phi.sin()) * sn) * u;
        let wt = u_weights[j] * mu_w[k] * dphi * u * u;
        let foot = trace_back(field, t, x, &v, s, dt_ode)?;
        let e_x = field.field(s, &foot.x);
        let y = x + v * (s - t);
        let e_y = field.field(s, &y);
        let div_y = field.gradient(s, &y).trace();
        let grad_v = background.grad(&v);
        let grad_vs = background.grad(&foot.v);
        let f_v = background.eval_vec(&v);
        Ok([
            wt * e_x.dot(&grad_vs),
            wt * e_x.dot(&(grad_vs - grad_v)),
            wt * (e_x - e_y).dot(&grad_v),
            wt * (grad_v.dot(&e_y) + f_v * (s - t) * div_y),
            wt * f_v * (s - t) * div_y,
        ])
    });
    let mut acc = [0.0; 5];
    for r in parts {
        let r = r?;
        for (a, b) in acc.iter_mut().zip(r) {
            *a += b;
        }
    }
    let [total, term_i, term_ii, term_iii, term_iv] = acc;
    Ok(Decomposition {
        x: (*x).into(),
        t,
        s,
        q,
        total,
        term_i,
        term_ii,
        term_iii,
        term_iv,
        closure: total - (term_i + term_ii + term_iii - term_iv),
    })
}

/// Local power-law exponent from magnitudes at r and 2r: -log2(|b|/|a|).
pub fn doubling_exponent(at_r: f64, at_2r: f64) -> f64 {
    -(at_2r.abs() / at_r.abs()).log2()
}
