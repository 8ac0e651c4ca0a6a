//! Run artifacts: series.csv, per-cadence snapshots and report.json.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::acceptance::Verdict;
use crate::config;
use crate::diagnostics::{gronwall_monitor, GronwallVerdict, NormReport};
use crate::error::Result;
use crate::field::EnvelopeReport;
use crate::model::AuditReport;
use crate::solver::RunState;

pub const SCHEMA_VERSION: u32 = 1;

pub const SERIES_HEADER: &str = "t,rho_sup,rho_norm_4,rho_norm_6,rho_norm_p,Q_t,m_sup,P_t,Psi_t,fit_exponent";

/// One row per recorded time; a missing fit is written as NaN.
pub fn write_series<W: Write>(mut out: W, series: &[NormReport]) -> std::io::Result<()> {
    writeln!(out, "{SERIES_HEADER}")?;
    for n in series {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e},{}",
            n.t,
            n.rho_sup,
            n.rho_norm_4,
            n.rho_norm_6,
            n.rho_norm_p,
            n.q_t,
            n.m_sup,
            n.p_t,
            n.psi_t,
            n.fit_exponent()
        )?;
    }
    Ok(())
}

/// Files created in an output directory, removable as a unit when a
/// command aborts.
pub struct ArtifactDir {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
}

impl ArtifactDir {
    pub fn create(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), created_dir, files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.files.push(path);
        Ok(BufWriter::new(f))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    /// Remove everything this writer created.
    pub fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// snapshot_{k}.csv (g on the grid) and field_{k}.csv (ρ, m, |E|) for step k.
pub fn write_snapshot(dir: &mut ArtifactDir, run: &RunState) -> Result<()> {
    let k = run.step_index;
    let mut w = dir.file(&format!("snapshot_{k}.csv"))?;
    run.state.write_snapshot(&mut w)?;
    w.flush()?;
    let mut w = dir.file(&format!("field_{k}.csv"))?;
    run.history.last().write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub t_final: f64,
    pub max_rho_sup: f64,
    /// Smallest and largest fitted tail exponent over the run, when any fit exists.
    pub fit_exponent_range: Option<(f64, f64)>,
    pub fitted_times: usize,
    pub max_q_t: f64,
    pub max_g_tail_r2: f64,
    pub total_exits: usize,
    pub max_range_violations: usize,
    pub total_clipped: usize,
    pub final_envelope: EnvelopeReport,
    pub bounded: Vec<GronwallVerdict>,
}

impl RunSummary {
    pub fn of(run: &RunState) -> Result<Self> {
        let s = &run.series;
        let fits: Vec<f64> = s.iter().filter_map(|n| n.fit.as_ref().map(|f| f.exponent)).collect();
        let fit_exponent_range = (!fits.is_empty()).then(|| {
            (fits.iter().copied().fold(f64::INFINITY, f64::min), fits.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        });
        let bounded = if s.len() >= 2 { gronwall_monitor(s, run.config.gronwall_ceiling)? } else { Vec::new() };
        Ok(Self {
            steps: run.step_index,
            t_final: run.t(),
            max_rho_sup: s.iter().map(|n| n.rho_sup).fold(0.0, f64::max),
            fit_exponent_range,
            fitted_times: fits.len(),
            max_q_t: s.iter().map(|n| n.q_t).fold(0.0, f64::max),
            max_g_tail_r2: s.iter().map(|n| n.g_tail_r2).fold(0.0, f64::max),
            total_exits: run.steps.iter().map(|x| x.exits).sum(),
            max_range_violations: run.steps.iter().map(|x| x.range_violations).max().unwrap_or(0),
            total_clipped: run.steps.iter().map(|x| x.clipped).sum(),
            final_envelope: run.latest_norms().envelope.clone(),
            bounded,
        })
    }
}

/// Wall-clock seconds per phase. Not part of the deterministic content.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Timing {
    pub simulate: f64,
    pub acceptance: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub version: &'static str,
    pub command: String,
    /// Effective configuration in the input format.
    pub config: String,
    pub seed: u64,
    pub audit: Option<AuditReport>,
    pub summary: RunSummary,
    pub verdicts: Vec<Verdict>,
    pub timing: Timing,
}

impl Report {
    pub fn new(command: &str, run: &RunState, seed: u64, verdicts: Vec<Verdict>, timing: Timing) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config: config::echo(&run.config),
            seed,
            audit: run.audit.clone(),
            summary: RunSummary::of(run)?,
            verdicts,
            timing,
        })
    }
}
