//! Time stepping of the deviation g = F - f by backward characteristics,
//! coupled to the Gauss-law field through a predictor-corrector loop.

use std::sync::Arc;

use serde::Serialize;

use crate::characteristics::{integrate_increment_unchecked, ForceField, FieldHistory};
use crate::diagnostics::{DiagnosticOptions, NormReport};
use crate::error::{Error, Result};
use crate::field::{density_from_values, RadialFieldSnapshot, RadialNodes};
use crate::model::{audit_conditions, AuditOptions, AuditReport, BackgroundSpec, ExponentPair, ExternalFieldSpec, InitialDataSpec};
use crate::phase_grid::{build_grid, lift, project, DeviationState, GridConfig, PhaseGrid, TailRule};
use crate::{par, Vec3};

/// Node update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// f(t+dt, x, v) = f(t, X, V) at the one-step foot, interpolated from g.
    Transport,
    /// g(t+dt) = g(t, foot) - ∫ ℰ·∇F(V) dτ over the step.
    Duhamel,
    /// Trace every node back to t = 0 and use the exact initial deviation:
    /// g = F(v) - F(V(0)) + g0(X(0), V(0)). No interpolation of g.
    FullTrace,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Transport => "transport",
            Self::Duhamel => "duhamel",
            Self::FullTrace => "full_trace",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "transport" => Some(Self::Transport),
            "duhamel" => Some(Self::Duhamel),
            "full_trace" => Some(Self::FullTrace),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimConfig {
    /// Horizon T.
    pub t_end: f64,
    pub dt: f64,
    pub dt_ode: f64,
    pub grid: GridConfig,
    pub background: BackgroundSpec,
    pub initial: InitialDataSpec,
    pub external: ExternalFieldSpec,
    pub exponents: ExponentPair,
    pub scheme: Scheme,
    pub corrector: bool,
    pub tail: TailRule,
    pub diagnostics: DiagnosticOptions,
    /// Ceiling on max/initial for the boundedness verdicts.
    pub gronwall_ceiling: f64,
    /// Guard: abort once ‖ρ‖_∞ exceeds this factor times the reference level.
    pub blowup_factor: f64,
    /// Write a snapshot every k steps; 0 disables.
    pub snapshot_every: usize,
    pub tol_clip: f64,
    pub clip: bool,
    pub skip_audit: bool,
    pub audit: AuditOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        let background = BackgroundSpec::default();
        let initial = InitialDataSpec { background, depth: 0.5, support_radius: 1.0 };
        let exponents = ExponentPair::default();
        Self {
            t_end: 2.0,
            dt: 0.05,
            dt_ode: 0.05,
            grid: GridConfig::default(),
            background,
            initial,
            external: ExternalFieldSpec::None,
            exponents,
            scheme: Scheme::FullTrace,
            corrector: true,
            tail: TailRule::default(),
            diagnostics: DiagnosticOptions { p: exponents.p, q: exponents.q, ..DiagnosticOptions::default() },
            gronwall_ceiling: 10.0,
            blowup_factor: 1000.0,
            snapshot_every: 0,
            tol_clip: 1e-6,
            clip: false,
            skip_audit: false,
            audit: AuditOptions::default(),
        }
    }
}

impl SimConfig {
    /// Number of macro steps; T must be an integer multiple of dt.
    pub fn n_steps(&self) -> Result<usize> {
        let ratio = self.t_end / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidConfig(format!("T = {} is not an integer multiple of dt = {}", self.t_end, self.dt)));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidConfig(format!("T = {} must be a finite nonnegative time", self.t_end)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.dt_ode > 0.0 && self.dt_ode <= self.dt * (1.0 + 1e-12)) {
            return Err(Error::InvalidConfig(format!("dt_ode = {} must lie in (0, dt = {}]", self.dt_ode, self.dt)));
        }
        self.n_steps()?;
        if self.grid.r_max <= self.initial.support_radius {
            return Err(Error::InvalidConfig(format!(
                "grid.r_max = {} does not cover the perturbation support N = {}",
                self.grid.r_max, self.initial.support_radius
            )));
        }
        if self.grid.u_max <= self.background.cutoff {
            return Err(Error::InvalidConfig(format!(
                "grid.u_max = {} must exceed the cutoff speed W = {}",
                self.grid.u_max, self.background.cutoff
            )));
        }
        if self.initial.background != self.background {
            return Err(Error::InvalidConfig("initial data must share the run background".into()));
        }
        if !self.external.is_spherically_symmetric() {
            return Err(Error::InvalidConfig(format!(
                "external field '{}' breaks spherical symmetry; the reduced solver only accepts none or radial3",
                self.external.kind()
            )));
        }
        if !(self.blowup_factor > 0.0) || !(self.gronwall_ceiling > 1.0) {
            return Err(Error::InvalidConfig("blow-up factor must be positive and the Gronwall ceiling above 1".into()));
        }
        let (lo, hi) = self.diagnostics.fit_window;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidConfig(format!("fit window [{lo}, {hi}] is not a positive interval")));
        }
        Ok(())
    }

    /// Grid with the u spacing aligned to the cutoff speed.
    pub fn grid_config(&self) -> GridConfig {
        GridConfig { align_speed: Some(self.background.cutoff), ..self.grid.clone() }
    }
}

/// Per-step bookkeeping.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StepStats {
    pub t: f64,
    /// Feet whose speed left the u-box and were evaluated by clamping.
    pub exits: usize,
    pub range_violations: usize,
    pub min_f: f64,
    pub max_f: f64,
    pub clipped: usize,
}

/// Live state of a run.
pub struct RunState {
    pub config: SimConfig,
    pub grid: Arc<PhaseGrid>,
    pub nodes: Arc<RadialNodes>,
    pub state: DeviationState,
    pub history: FieldHistory,
    pub series: Vec<NormReport>,
    pub steps: Vec<StepStats>,
    pub audit: Option<AuditReport>,
    pub step_index: usize,
    /// ‖ρ‖_∞ level that trips the blow-up guard.
    pub rho_limit: f64,
}

impl RunState {
    pub fn initial_norms(&self) -> &NormReport {
        &self.series[0]
    }

    pub fn latest_norms(&self) -> &NormReport {
        self.series.last().unwrap()
    }

    pub fn t(&self) -> f64 {
        self.state.t
    }

    pub fn total_steps(&self) -> usize {
        self.config.n_steps().unwrap_or(0)
    }

    pub fn finished(&self) -> bool {
        self.step_index >= self.total_steps()
    }
}

/// Build g(0) = F - f0, the initial field and the t = 0 norms.
pub fn initialize(config: SimConfig) -> Result<RunState> {
    config.validate()?;
    let audit = if config.skip_audit {
        None
    } else {
        let opts = AuditOptions { horizon: config.t_end.max(config.dt), p: config.exponents.p, ..config.audit.clone() };
        let report = audit_conditions(&config.background, &config.initial, &config.external, &opts)?;
        if !report.admissible() {
            let failed: Vec<&str> = report.conditions.iter().filter(|c| !c.pass).map(|c| c.condition.as_str()).collect();
            return Err(Error::AuditFailed(format!("conditions {} not satisfied", failed.join(", "))));
        }
        Some(report)
    };
    let grid = Arc::new(build_grid(&config.grid_config())?);
    let nodes = Arc::new(RadialNodes::from_axis(&grid.r));
    let init = config.initial;
    let g: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let c = grid.coords(idx);
            init.deviation(c.r, c.u)
        })
        .collect();
    let state = DeviationState::new(0.0, grid.clone(), g, config.tail)?;
    let snapshot = RadialFieldSnapshot::from_density(0.0, nodes.clone(), density_from_values(&grid, &state.g))?;
    let norms = NormReport::compute(&state, &snapshot, &config.background, &config.diagnostics, config.background.cutoff);
    let reference = norms.rho_sup.max(1e-3 * config.background.total_mass());
    let rho_limit = config.blowup_factor * reference;
    let history = FieldHistory::new(snapshot, config.external.clone());
    Ok(RunState {
        config,
        grid,
        nodes,
        state,
        history,
        series: vec![norms],
        steps: Vec::new(),
        audit,
        step_index: 0,
        rho_limit,
    })
}

/// RK4 for (X, V) together with I = ∫ ℰ(s, X)·∇F(V) ds, from s0 to s1.
/// Returns (X, V, ∫_{s0}^{s1} ℰ·∇F(V) ds).
fn integrate_with_source<F: ForceField + ?Sized>(
    field: &F,
    bg: &BackgroundSpec,
    s0: f64,
    x: Vec3,
    v: Vec3,
    s1: f64,
    dt_ode: f64,
) -> (Vec3, Vec3, f64) {
    let span = s1 - s0;
    let n = ((span.abs() / dt_ode) - 1e-9).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let (mut x, mut v, mut acc) = (x, v, 0.0);
    let src = |s: f64, x: &Vec3, v: &Vec3| {
        let e = field.field(s, x);
        (e, e.dot(&bg.grad(v)))
    };
    for k in 0..n {
        let s = s0 + k as f64 * h;
        let half = 0.5 * h;
        let (e1, q1) = src(s, &x, &v);
        let (x2, v2) = (x + v * half, v - e1 * half);
        let (e2, q2) = src(s + half, &x2, &v2);
        let (x3, v3) = (x + v2 * half, v - e2 * half);
        let (e3, q3) = src(s + half, &x3, &v3);
        let (x4, v4) = (x + v3 * h, v - e3 * h);
        let (e4, q4) = src(s + h, &x4, &v4);
        let sixth = h / 6.0;
        x += (v + (v2 + v3) * 2.0 + v4) * sixth;
        v -= (e1 + (e2 + e3) * 2.0 + e4) * sixth;
        acc += (q1 + 2.0 * (q2 + q3) + q4) * sixth;
    }
    (x, v, acc)
}

/// New g for every node given the history up to t1 and the state at t0.
/// Returns (values, exits).
fn update_nodes(run: &RunState, t0: f64, t1: f64) -> (Vec<f64>, usize) {
    let grid = &*run.grid;
    let cfg = &run.config;
    let bg = cfg.background;
    let init = cfg.initial;
    let history = &run.history;
    let prev = &run.state;
    let u_max = grid.u_max();
    let block = grid.n_u() * grid.n_mu();
    let reach = bg.cutoff + history.integrated_sup(t1);
    // with ℰ ≡ 0 on [0, t1] the characteristics are straight lines
    let free = history.sup_field_until(t1) == 0.0;
    let trace = |x: Vec3, v: Vec3, s: f64| {
        if free {
            (x - v * (t1 - s), Vec3::zeros())
        } else {
            integrate_increment_unchecked(history, t1, x, v, s, cfg.dt_ode)
        }
    };
    let rows = par::map_indexed(grid.n_r(), |i| {
        let mut vals = Vec::with_capacity(block);
        let mut exits = 0usize;
        for off in 0..block {
            let c = grid.coords(i * block + off);
            let (x, v) = lift(c);
            let g = match cfg.scheme {
                Scheme::Transport => {
                    let (xf, dv) = trace(x, v, t0);
                    let foot = project(&xf, &(v + dv));
                    if foot.u > u_max {
                        exits += 1;
                    }
                    bg.difference(&v, &dv) + prev.sample_unchecked(foot)
                }
                Scheme::Duhamel => {
                    let (xf, vf, back) = if free {
                        (x - v * (t1 - t0), v, 0.0)
                    } else {
                        integrate_with_source(history, &bg, t1, x, v, t0, cfg.dt_ode)
                    };
                    let foot = project(&xf, &vf);
                    if foot.u > u_max {
                        exits += 1;
                    }
                    // back = ∫_{t1}^{t0} = -∫_{t0}^{t1}
                    prev.sample_unchecked(foot) + back
                }
                Scheme::FullTrace => {
                    if c.u > reach {
                        0.0
                    } else {
                        let (x0, dv) = trace(x, v, 0.0);
                        let (r0, u0) = (x0.norm(), (v + dv).norm());
                        if u0 > u_max {
                            exits += 1;
                        }
                        bg.difference(&v, &dv) + init.deviation(r0, u0)
                    }
                }
            };
            vals.push(g);
        }
        (vals, exits)
    });
    let mut g = Vec::with_capacity(grid.len());
    let mut exits = 0;
    for (vals, e) in rows {
        g.extend(vals);
        exits += e;
    }
    (g, exits)
}

fn snapshot_of(run: &RunState, t: f64, g: &[f64]) -> Result<RadialFieldSnapshot> {
    RadialFieldSnapshot::from_density(t, run.nodes.clone(), density_from_values(&run.grid, g))
}

/// Advance one macro step with predictor, update and optional corrector.
pub fn step(run: &mut RunState) -> Result<StepStats> {
    let cfg = run.config.clone();
    let n = run.step_index;
    let t0 = run.state.t;
    let t1 = (n + 1) as f64 * cfg.dt;

    // predictor: linear extrapolation of ρ in time
    let snaps = run.history.snapshots();
    let cur = &snaps[snaps.len() - 1].rho;
    let rho_pred: Vec<f64> = if snaps.len() >= 2 {
        let old = &snaps[snaps.len() - 2].rho;
        cur.iter().zip(old).map(|(a, b)| 2.0 * a - b).collect()
    } else {
        cur.clone()
    };
    run.history.push(RadialFieldSnapshot::from_density(t1, run.nodes.clone(), rho_pred)?)?;

    let (mut g, mut exits) = update_nodes(run, t0, t1);
    run.history.replace_last(snapshot_of(run, t1, &g)?)?;
    if cfg.corrector {
        let (g2, e2) = update_nodes(run, t0, t1);
        g = g2;
        exits = e2;
        run.history.replace_last(snapshot_of(run, t1, &g)?)?;
    }

    let mut state = DeviationState::new(t1, run.grid.clone(), g, cfg.tail)?;
    let sup_f0 = cfg.initial.sup();
    let bounds = state.bound_check(&cfg.background, sup_f0, cfg.tol_clip);
    let mut clipped = 0;
    if cfg.clip && bounds.violations > 0 {
        let grid = run.grid.clone();
        let mut g = std::mem::take(&mut state.g);
        for (idx, val) in g.iter_mut().enumerate() {
            let (_, j, _) = grid.unindex(idx);
            let fu = cfg.background.eval(grid.u_nodes[j]);
            let f = (fu - *val).clamp(0.0, sup_f0);
            if fu - f != *val {
                clipped += 1;
                *val = fu - f;
            }
        }
        state = DeviationState::new(t1, grid, g, cfg.tail)?;
        run.history.replace_last(snapshot_of(run, t1, &state.g)?)?;
    }
    run.state = state;
    run.step_index = n + 1;

    let prev_q = run.latest_norms().q_t;
    let norms = NormReport::compute(&run.state, run.history.last(), &cfg.background, &cfg.diagnostics, prev_q);
    let rho_sup = norms.rho_sup;
    run.series.push(norms);
    let stats = StepStats { t: t1, exits, range_violations: bounds.violations, min_f: bounds.min_f, max_f: bounds.max_f, clipped };
    run.steps.push(stats.clone());
    if !(rho_sup <= run.rho_limit) {
        return Err(Error::BlowUp { t: t1, rho_sup, limit: run.rho_limit });
    }
    Ok(stats)
}

/// Initialize and step to T, calling `observe` after initialization and
/// after every step.
pub fn run_with(config: SimConfig, mut observe: impl FnMut(&RunState) -> Result<()>) -> Result<RunState> {
    let mut run = initialize(config)?;
    observe(&run)?;
    while !run.finished() {
        step(&mut run)?;
        observe(&run)?;
    }
    Ok(run)
}

pub fn run(config: SimConfig) -> Result<RunState> {
    run_with(config, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scheme: Scheme, depth: f64) -> SimConfig {
        let mut c = SimConfig::default();
        c.grid = GridConfig { n_r: 24, n_u: 12, n_mu: 6, r_max: 50.0, u_max: 1.5, ..GridConfig::default() };
        c.initial.depth = depth;
        c.scheme = scheme;
        c.t_end = 0.2;
        c.dt = 0.05;
        c.dt_ode = 0.05;
        c.skip_audit = true;
        c.diagnostics.fit_window = (5.0, 50.0);
        c
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        for scheme in [Scheme::Transport, Scheme::Duhamel, Scheme::FullTrace] {
            let run = run(small(scheme, 0.0)).unwrap();
            assert!(run.state.g.iter().all(|&g| g == 0.0), "{scheme:?}");
            assert!(run.series.iter().all(|r| r.rho_sup == 0.0));
        }
    }

    #[test]
    fn rejects_bad_step_ratio() {
        let mut c = small(Scheme::Transport, 0.5);
        c.dt = 0.01;
        c.dt_ode = 0.01;
        c.t_end = 0.105;
        assert!(matches!(initialize(c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn rejects_asymmetric_external_field() {
        let mut c = small(Scheme::Transport, 0.5);
        c.external = ExternalFieldSpec::Swirl4(crate::model::Schedule::constant(0.1));
        assert!(matches!(initialize(c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn initial_deviation_vanishes_outside_support() {
        let run = initialize(small(Scheme::FullTrace, 0.5)).unwrap();
        for idx in 0..run.grid.len() {
            let c = run.grid.coords(idx);
            if c.r >= 1.0 {
                assert_eq!(run.state.g[idx], 0.0);
            }
        }
        let bound = 4.0 * std::f64::consts::PI / 3.0 * 0.5;
        assert!(run.initial_norms().rho_sup <= bound);
    }

    #[test]
    fn schemes_agree_on_a_short_run() {
        let a = run(small(Scheme::Transport, 0.5)).unwrap();
        let b = run(small(Scheme::Duhamel, 0.5)).unwrap();
        let c = run(small(Scheme::FullTrace, 0.5)).unwrap();
        let sup = a.state.g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let d_ab = a.state.g.iter().zip(&b.state.g).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let d_ac = a.state.g.iter().zip(&c.state.g).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(d_ab < 0.05 * sup, "{d_ab} vs {sup}");
        assert!(d_ac < 0.05 * sup, "{d_ac} vs {sup}");
    }

    #[test]
    fn sequential_and_parallel_runs_are_identical() {
        let a = run(small(Scheme::Transport, 0.5)).unwrap();
        par::set_force_sequential(true);
        let b = run(small(Scheme::Transport, 0.5));
        par::set_force_sequential(false);
        assert_eq!(a.state.g, b.unwrap().state.g);
    }
}
