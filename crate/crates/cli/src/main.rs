use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vpsa_core::acceptance::{self, AcceptanceOptions, LatticeCheck};
use vpsa_core::characteristics::{admissibility_constants, change_of_variables_check, injectivity_probe, CovQuadrature};
use vpsa_core::config;
use vpsa_core::field::{gauss_oracle, LatticeSpec};
use vpsa_core::model::{audit_conditions, AuditOptions};
use vpsa_core::report::{self, ArtifactDir, Report, Timing};
use vpsa_core::solver::{self, RunState, SimConfig};
use vpsa_core::{Error, Vec3};

#[derive(Parser)]
#[command(name = "vpsa", version, about = "Radial Vlasov-Poisson runs with spatial decay diagnostics")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 picks the number of cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed for sampled checks; overrides audit.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate to T and write series.csv, snapshots and report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Also run the lattice oracle check on the uniform ball.
        #[arg(long)]
        oracle: bool,
    },
    /// Check the structural conditions on background, data and external field.
    Audit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pairwise contraction ratios of v -> V(0, t, x, v) on a completed run.
    Probe {
        #[command(flatten)]
        at: PointArgs,
        /// Radius of the sampled velocity ball.
        #[arg(long = "D", default_value_t = 2.0)]
        d: f64,
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    /// Change-of-variables identity on a completed run.
    CovCheck {
        #[command(flatten)]
        at: PointArgs,
        /// Radius of the integrated velocity ball.
        #[arg(long = "D", default_value_t = 2.0)]
        d: f64,
    },
    /// Direct lattice sum of the Coulomb kernel against the Gauss-law field.
    Oracle {
        /// Use the final density of this run; the uniform unit ball otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluation point; without it the full 16^3 sweep on the ball runs.
        #[arg(long, value_parser = parse_point)]
        x: Option<Vec3>,
        #[arg(long, default_value_t = 1.5)]
        half_width: f64,
        #[arg(long, default_value_t = 0.025)]
        spacing: f64,
    },
}

#[derive(Args)]
struct PointArgs {
    #[arg(long)]
    config: PathBuf,
    /// Point as |x| (placed on the first axis) or x,y,z; defaults to 1.25 C_D.
    #[arg(long, value_parser = parse_point)]
    x: Option<Vec3>,
    /// Evaluation time; defaults to T.
    #[arg(long)]
    t: Option<f64>,
}

fn parse_point(s: &str) -> Result<Vec3, String> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number '{p}'"))).collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [r] => Ok(Vec3::new(*r, 0.0, 0.0)),
        [a, b, c] => Ok(Vec3::new(*a, *b, *c)),
        _ => Err("expected a radius or x,y,z".into()),
    }
}

/// 1 validation, 2 runtime abort, 3 I/O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Json(_) => 3,
        Error::BlowUp { .. } | Error::OutOfDomain(_) | Error::NonPositiveJacobian { .. } | Error::OutsideHistory { .. } => 2,
        _ => 1,
    }
}

fn setup_threads(n: usize) -> Result<(), Error> {
    #[cfg(feature = "parallel")]
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        eprintln!("warning: built without the parallel feature; --threads {n} ignored");
    }
    Ok(())
}

fn load(path: &Path, seed: Option<u64>) -> Result<SimConfig, Error> {
    let mut c = config::parse_file(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })?;
    if let Some(s) = seed {
        c.audit.seed = s;
    }
    Ok(c)
}

/// Simulate up to t (a multiple of dt, at most T).
fn simulate_to(mut c: SimConfig, t: Option<f64>) -> Result<RunState, Error> {
    if let Some(t) = t {
        if t > c.t_end + 1e-12 {
            return Err(Error::InvalidConfig(format!("--t {t} exceeds T = {}", c.t_end)));
        }
        c.t_end = t;
        c.n_steps()?;
    }
    solver::run(c)
}

fn cmd_run(cli: &Cli, path: &Path, oracle: bool) -> Result<(), Error> {
    let start = Instant::now();
    let cfg = load(path, cli.seed)?;
    let seed = cli.seed.unwrap_or(cfg.audit.seed);
    let every = cfg.snapshot_every;
    let mut out = ArtifactDir::create(&cli.out)?;
    let result = (|| {
        let run = solver::run_with(cfg, |r| {
            if every > 0 && r.step_index % every == 0 {
                report::write_snapshot(&mut out, r)?;
            }
            Ok(())
        })?;
        let simulate = start.elapsed().as_secs_f64();
        let mut w = out.file("series.csv")?;
        report::write_series(&mut w, &run.series)?;
        std::io::Write::flush(&mut w)?;
        let t_acc = Instant::now();
        let verdicts = acceptance::evaluate_run(&run, &AcceptanceOptions { field_oracle: oracle, seed });
        let timing = Timing { simulate, acceptance: t_acc.elapsed().as_secs_f64(), total: start.elapsed().as_secs_f64() };
        for v in &verdicts {
            println!("{}", v.line());
        }
        let rep = Report::new("run", &run, seed, verdicts, timing)?;
        out.write_json("report.json", &rep)?;
        Ok(())
    })();
    if result.is_err() {
        out.discard();
    }
    result
}

fn cmd_audit(cli: &Cli, path: &Path) -> Result<bool, Error> {
    let c = load(path, cli.seed)?;
    let opts = AuditOptions { horizon: c.t_end.max(c.dt), p: c.exponents.p, ..c.audit.clone() };
    let rep = audit_conditions(&c.background, &c.initial, &c.external, &opts)?;
    for cond in &rep.conditions {
        println!("({}) {}", cond.condition, if cond.pass { "pass" } else { "fail" });
    }
    let mut out = ArtifactDir::create(&cli.out)?;
    if let Err(e) = out.write_json("audit.json", &rep) {
        out.discard();
        return Err(e);
    }
    Ok(rep.admissible())
}

fn cmd_probe(cli: &Cli, at: &PointArgs, d: f64, samples: usize) -> Result<(), Error> {
    let c = load(&at.config, cli.seed)?;
    let seed = cli.seed.unwrap_or(7);
    let run = simulate_to(c, at.t)?;
    let t = run.t();
    let dt_ode = run.config.dt_ode.min(0.01);
    let consts = admissibility_constants(&run.history, &run.config.background, t, d, dt_ode)?;
    let x = at.x.unwrap_or_else(|| Vec3::x() * (1.25 * consts.c_d));
    let rep = injectivity_probe(&run.history, t, &x, d, samples, seed, dt_ode, consts.c_d)?;
    println!(
        "min ratio {:.6}, min det B {:.6}, {} pairs below 1/2 ({})",
        rep.min_ratio,
        rep.min_det_b,
        rep.contraction_violations,
        if rep.injective_evidence() { "injective" } else { "not shown injective" }
    );
    let mut out = ArtifactDir::create(&cli.out)?;
    let r = out.write_json("probe.json", &json!({ "config": config::echo(&run.config), "admissibility": consts, "probe": rep }));
    if r.is_err() {
        out.discard();
    }
    r
}

fn cmd_cov(cli: &Cli, at: &PointArgs, d: f64) -> Result<(), Error> {
    let c = load(&at.config, cli.seed)?;
    let run = simulate_to(c, at.t)?;
    let t = run.t();
    let bg = run.config.background;
    let dt_ode = run.config.dt_ode.min(0.01);
    let consts = admissibility_constants(&run.history, &bg, t, d, dt_ode)?;
    let x = at.x.unwrap_or_else(|| Vec3::x() * (1.25 * consts.c_d));
    if x.norm() <= consts.c_d {
        eprintln!("warning: |x| = {} is inside the admissibility radius {:.3}", x.norm(), consts.c_d);
    }
    let quad = CovQuadrature { u_max: d, ..CovQuadrature::default() };
    let rep = change_of_variables_check(&run.history, &bg, t, &x, &quad, dt_ode)?;
    println!("lhs {:.12e} rhs {:.12e} relerr {:.3e} min det B {:.6}", rep.lhs, rep.rhs, rep.relerr, rep.min_det_b);
    let mut out = ArtifactDir::create(&cli.out)?;
    let r = out.write_json("cov_check.json", &json!({ "config": config::echo(&run.config), "admissibility": consts, "check": rep }));
    if r.is_err() {
        out.discard();
    }
    r
}

fn cmd_oracle(cli: &Cli, cfg: Option<&Path>, x: Option<Vec3>, half_width: f64, spacing: f64) -> Result<(), Error> {
    let mut out = ArtifactDir::create(&cli.out)?;
    let body = (|| -> Result<serde_json::Value, Error> {
        let lattice = LatticeSpec { half_width, spacing };
        match (cfg, x) {
            (None, None) => {
                let v = acceptance::a8_field_oracle();
                println!("{}", v.line());
                Ok(json!({ "density": "unit_ball", "verdict": v }))
            }
            (None, Some(x)) => {
                let check = LatticeCheck::unit_ball(&x, &lattice)?;
                println!("oracle {:?} field_at {:?} relerr {:.3e}", check.oracle.field, check.field_at, check.relerr);
                Ok(json!({ "density": "unit_ball", "check": check }))
            }
            (Some(path), x) => {
                let c = load(path, cli.seed)?;
                let run = solver::run(c)?;
                let snap = run.history.last();
                let x = x.unwrap_or_else(|| Vec3::new(2.0, 0.0, 0.0));
                let res = gauss_oracle(|y| snap.density_at(y.norm()), &x, &lattice)?;
                let e = snap.field_at(&x);
                let relerr = (Vec3::from(res.field) - e).norm() / e.norm();
                println!("oracle {:?} field_at {:?} relerr {:.3e}", res.field, <[f64; 3]>::from(e), relerr);
                Ok(json!({ "density": "run", "config": config::echo(&run.config), "t": run.t(), "oracle": res, "field_at": <[f64; 3]>::from(e), "relerr": relerr }))
            }
        }
    })();
    let r = body.and_then(|b| out.write_json("oracle.json", &b));
    if r.is_err() {
        out.discard();
    }
    r
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = setup_threads(cli.threads).and_then(|_| match &cli.command {
        Command::Run { config, oracle } => cmd_run(&cli, config, *oracle).map(|_| true),
        Command::Audit { config } => cmd_audit(&cli, config),
        Command::Probe { at, d, samples } => cmd_probe(&cli, at, *d, *samples).map(|_| true),
        Command::CovCheck { at, d } => cmd_cov(&cli, at, *d).map(|_| true),
        Command::Oracle { config, x, half_width, spacing } => cmd_oracle(&cli, config.as_deref(), *x, *half_width, *spacing).map(|_| true),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
