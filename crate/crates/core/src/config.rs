//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment, nesting is spelled with dotted
//! keys (`grid.n_r = 128`). Keys not listed in [`KEYS`] are rejected, as are
//! repeated keys. Errors carry the 1-based line number.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BackgroundSpec, ExponentPair, ExternalFieldSpec, InitialDataSpec, Schedule};
use crate::solver::{Scheme, SimConfig};

/// Every accepted key with its unit or value domain.
pub const KEYS: &[(&str, &str)] = &[
    ("T", "horizon, time units"),
    ("dt", "macro step, time units; T must be an integer multiple"),
    ("dt_ode", "characteristic substep, time units, at most dt"),
    ("q", "velocity weight exponent, > 7 + sqrt(33); sets p = 4 - 8/q"),
    ("scheme", "full_trace | transport | duhamel"),
    ("corrector", "true | false"),
    ("grid.n_r", "radial nodes"),
    ("grid.n_r_inner", "uniform radial nodes on [0, 1]; default n_r / 4"),
    ("grid.n_u", "speed nodes"),
    ("grid.n_mu", "cosine nodes"),
    ("grid.r_max", "outer radius, length units"),
    ("grid.u_max", "largest speed, velocity units, > W"),
    ("background.F0", "peak of F, phase-space density units"),
    ("background.W", "cutoff speed, velocity units"),
    ("initial.delta", "perturbation depth in [0, 1)"),
    ("initial.N", "perturbation support radius, length units"),
    ("external.kind", "none | radial3 | swirl4"),
    ("external.coefficient", "constant coefficient a or c"),
    ("external.schedule", "piecewise-linear table t:value, t:value, ..."),
    ("tail.exponent", "decay exponent of g beyond r_max; inf for zero"),
    ("diag.fit_lo", "lower edge of the tail-fit window, length units"),
    ("diag.fit_hi", "upper edge of the tail-fit window, length units"),
    ("diag.support_threshold", "|g| level treated as zero for Q_t"),
    ("diag.tail_radius", "radius from which the |g| r^2 monitor applies"),
    ("solver.gronwall_ceiling", "max/initial ratio for a bounded verdict"),
    ("solver.blowup_factor", "abort when ||rho||_inf exceeds this factor of the reference"),
    ("solver.tol_clip", "tolerance of the 0 <= f <= sup f0 check"),
    ("solver.clip", "true | false: clip f into range after each step"),
    ("output.snapshot_every", "write snapshot files every k steps; 0 disables"),
    ("audit.skip", "true | false"),
    ("audit.samples", "sampled points per condition"),
    ("audit.seed", "sampling seed"),
    ("audit.radius", "outer radius of the sampled window, length units"),
    ("audit.growth_tolerance", "allowed growth of sampled ratios across the window"),
    ("audit.divergence_floor", "weighted divergence accepted as zero"),
];

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

fn line_err(line: usize, message: impl Into<String>) -> Error {
    Error::ConfigLine { line, message: message.into() }
}

fn num(e: &Entry) -> Result<f64> {
    e.value.parse::<f64>().map_err(|_| line_err(e.line, format!("{}: expected a number, found '{}'", e.key, e.value)))
}

fn count(e: &Entry) -> Result<usize> {
    e.value.parse::<usize>().map_err(|_| line_err(e.line, format!("{}: expected a nonnegative integer, found '{}'", e.key, e.value)))
}

fn flag(e: &Entry) -> Result<bool> {
    match e.value {
        "true" => Ok(true),
        "false" => Ok(false),
        v => Err(line_err(e.line, format!("{}: expected true or false, found '{v}'", e.key))),
    }
}

fn schedule(e: &Entry) -> Result<Schedule> {
    let mut knots = Vec::new();
    for part in e.value.split(',') {
        let (t, v) = part
            .split_once(':')
            .ok_or_else(|| line_err(e.line, format!("external.schedule: expected t:value, found '{}'", part.trim())))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| line_err(e.line, format!("external.schedule: bad number '{}'", s.trim())));
        knots.push((parse(t)?, parse(v)?));
    }
    Schedule::new(knots).map_err(|err| line_err(e.line, err.to_string()))
}

/// Parse configuration text; defaults fill every key that is absent.
pub fn parse_str(text: &str) -> Result<SimConfig> {
    let mut entries: Vec<Entry> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| line_err(line, format!("expected key = value, found '{body}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(line_err(line, format!("unknown key '{key}'")));
        }
        if value.is_empty() {
            return Err(line_err(line, format!("{key}: missing value")));
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(line_err(line, format!("{key} already set on line {}", prev.line)));
        }
        entries.push(Entry { line, key, value });
    }

    let mut c = SimConfig::default();
    let mut peak = c.background.peak;
    let mut cutoff = c.background.cutoff;
    let mut depth = c.initial.depth;
    let mut support = c.initial.support_radius;
    let mut kind: Option<&Entry> = None;
    let mut coefficient: Option<(usize, Schedule)> = None;
    let mut fit = c.diagnostics.fit_window;
    for e in &entries {
        match e.key {
            "T" => c.t_end = num(e)?,
            "dt" => c.dt = num(e)?,
            "dt_ode" => c.dt_ode = num(e)?,
            "q" => c.exponents = ExponentPair::new(num(e)?).map_err(|err| line_err(e.line, err.to_string()))?,
            "scheme" => {
                c.scheme = Scheme::parse(e.value)
                    .ok_or_else(|| line_err(e.line, format!("scheme: expected full_trace, transport or duhamel, found '{}'", e.value)))?
            }
            "corrector" => c.corrector = flag(e)?,
            "grid.n_r" => c.grid.n_r = count(e)?,
            "grid.n_r_inner" => c.grid.n_r_inner = Some(count(e)?),
            "grid.n_u" => c.grid.n_u = count(e)?,
            "grid.n_mu" => c.grid.n_mu = count(e)?,
            "grid.r_max" => c.grid.r_max = num(e)?,
            "grid.u_max" => c.grid.u_max = num(e)?,
            "background.F0" => peak = num(e)?,
            "background.W" => cutoff = num(e)?,
            "initial.delta" => depth = num(e)?,
            "initial.N" => support = num(e)?,
            "external.kind" => kind = Some(e),
            "external.coefficient" | "external.schedule" => {
                if let Some((line, _)) = &coefficient {
                    return Err(line_err(e.line, format!("external coefficient already given on line {line}")));
                }
                let s = if e.key == "external.schedule" { schedule(e)? } else { Schedule::constant(num(e)?) };
                coefficient = Some((e.line, s));
            }
            "tail.exponent" => {
                let v = num(e)?;
                if !(v >= 0.0) {
                    return Err(line_err(e.line, "tail.exponent must be nonnegative"));
                }
                c.tail.exponent = v;
            }
            "diag.fit_lo" => fit.0 = num(e)?,
            "diag.fit_hi" => fit.1 = num(e)?,
            "diag.support_threshold" => c.diagnostics.support_threshold = num(e)?,
            "diag.tail_radius" => c.diagnostics.tail_radius = num(e)?,
            "solver.gronwall_ceiling" => c.gronwall_ceiling = num(e)?,
            "solver.blowup_factor" => c.blowup_factor = num(e)?,
            "solver.tol_clip" => c.tol_clip = num(e)?,
            "solver.clip" => c.clip = flag(e)?,
            "output.snapshot_every" => c.snapshot_every = count(e)?,
            "audit.skip" => c.skip_audit = flag(e)?,
            "audit.samples" => c.audit.samples = count(e)?,
            "audit.seed" => {
                c.audit.seed = e.value.parse().map_err(|_| line_err(e.line, format!("audit.seed: expected an unsigned integer, found '{}'", e.value)))?
            }
            "audit.radius" => c.audit.radius = num(e)?,
            "audit.growth_tolerance" => c.audit.growth_tolerance = num(e)?,
            "audit.divergence_floor" => c.audit.divergence_floor = num(e)?,
            _ => unreachable!("key table and match arms disagree"),
        }
    }

    let line_of = |key: &str| entries.iter().find(|e| e.key == key).map(|e| e.line);
    let first_line = |keys: &[&str]| keys.iter().filter_map(|k| line_of(k)).min().unwrap_or(0);

    c.background = BackgroundSpec::new(peak, cutoff).map_err(|e| line_err(first_line(&["background.F0", "background.W"]), e.to_string()))?;
    c.initial = InitialDataSpec::new(c.background, depth, support).map_err(|e| line_err(first_line(&["initial.delta", "initial.N"]), e.to_string()))?;
    c.grid.align_speed = Some(cutoff);
    c.external = match kind.map(|e| e.value) {
        None | Some("none") => {
            if let Some((line, _)) = coefficient {
                return Err(line_err(line, "coefficient given without external.kind = radial3 or swirl4"));
            }
            ExternalFieldSpec::None
        }
        Some(k @ ("radial3" | "swirl4")) => {
            let (_, s) = coefficient.ok_or_else(|| {
                line_err(kind.unwrap().line, format!("external.kind = {k} needs external.coefficient or external.schedule"))
            })?;
            if k == "radial3" {
                ExternalFieldSpec::Radial3(s)
            } else {
                ExternalFieldSpec::Swirl4(s)
            }
        }
        Some(other) => {
            return Err(line_err(kind.unwrap().line, format!("external.kind: expected none, radial3 or swirl4, found '{other}'")));
        }
    };
    c.diagnostics.fit_window = fit;
    c.diagnostics.p = c.exponents.p;
    c.diagnostics.q = c.exponents.q;
    c.audit.p = c.exponents.p;

    if let Err(e) = c.n_steps() {
        return Err(line_err(first_line(&["T", "dt"]), e.to_string()));
    }
    c.validate().map_err(|e| {
        let msg = e.to_string();
        let keys: &[&str] = if msg.contains("dt_ode") {
            &["dt_ode", "dt"]
        } else if msg.contains("r_max") {
            &["grid.r_max", "initial.N"]
        } else if msg.contains("u_max") {
            &["grid.u_max", "background.W"]
        } else if msg.contains("external") {
            &["external.kind"]
        } else if msg.contains("fit window") {
            &["diag.fit_lo", "diag.fit_hi"]
        } else if msg.contains("blow-up") {
            &["solver.blowup_factor", "solver.gronwall_ceiling"]
        } else {
            &["T", "dt"]
        };
        line_err(first_line(keys), msg)
    })?;
    Ok(c)
}

pub fn parse_file(path: &Path) -> Result<SimConfig> {
    parse_str(&std::fs::read_to_string(path)?)
}

/// Effective configuration as parseable text; every key is written.
pub fn echo(c: &SimConfig) -> String {
    let mut s = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    put("T", c.t_end.to_string());
    put("dt", c.dt.to_string());
    put("dt_ode", c.dt_ode.to_string());
    put("q", c.exponents.q.to_string());
    put("scheme", c.scheme.name().into());
    put("corrector", c.corrector.to_string());
    put("grid.n_r", c.grid.n_r.to_string());
    if let Some(n) = c.grid.n_r_inner {
        put("grid.n_r_inner", n.to_string());
    }
    put("grid.n_u", c.grid.n_u.to_string());
    put("grid.n_mu", c.grid.n_mu.to_string());
    put("grid.r_max", c.grid.r_max.to_string());
    put("grid.u_max", c.grid.u_max.to_string());
    put("background.F0", c.background.peak.to_string());
    put("background.W", c.background.cutoff.to_string());
    put("initial.delta", c.initial.depth.to_string());
    put("initial.N", c.initial.support_radius.to_string());
    put("external.kind", c.external.kind().into());
    match &c.external {
        ExternalFieldSpec::None => {}
        ExternalFieldSpec::Radial3(s) | ExternalFieldSpec::Swirl4(s) => {
            let knots: Vec<String> = s.knots().iter().map(|(t, v)| format!("{t}:{v}")).collect();
            put("external.schedule", knots.join(", "));
        }
    }
    put("tail.exponent", c.tail.exponent.to_string());
    put("diag.fit_lo", c.diagnostics.fit_window.0.to_string());
    put("diag.fit_hi", c.diagnostics.fit_window.1.to_string());
    put("diag.support_threshold", c.diagnostics.support_threshold.to_string());
    put("diag.tail_radius", c.diagnostics.tail_radius.to_string());
    put("solver.gronwall_ceiling", c.gronwall_ceiling.to_string());
    put("solver.blowup_factor", c.blowup_factor.to_string());
    put("solver.tol_clip", c.tol_clip.to_string());
    put("solver.clip", c.clip.to_string());
    put("output.snapshot_every", c.snapshot_every.to_string());
    put("audit.skip", c.skip_audit.to_string());
    put("audit.samples", c.audit.samples.to_string());
    put("audit.seed", c.audit.seed.to_string());
    put("audit.radius", c.audit.radius.to_string());
    put("audit.growth_tolerance", c.audit.growth_tolerance.to_string());
    put("audit.divergence_floor", c.audit.divergence_floor.to_string());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_of(err: Error) -> usize {
        match err {
            Error::ConfigLine { line, .. } => line,
            other => panic!("expected a line error, got {other}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_str("").unwrap();
        assert_eq!(echo(&c), echo(&SimConfig::default()));
        let c = parse_str("# only a comment\n\n   \n").unwrap();
        assert_eq!(c.t_end, 2.0);
    }

    #[test]
    fn exponent_below_threshold() {
        let err = parse_str("q = 10").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("7 + sqrt(33)") && msg.starts_with("config line 1"), "{msg}");
        let c = parse_str("q = 20").unwrap();
        assert_eq!(c.exponents.p, 3.6);
        assert_eq!(c.diagnostics.p, 3.6);
    }

    #[test]
    fn horizon_must_be_a_multiple_of_the_step() {
        let err = parse_str("dt = 0.01\nT = 0.105\n").unwrap_err();
        assert_eq!(line_of(err), 1);
        assert!(parse_str("dt = 0.01\nT = 0.1\ndt_ode = 0.01").is_ok());
    }

    #[test]
    fn errors_cite_lines() {
        assert_eq!(line_of(parse_str("T = 1\ngrid.nr = 4").unwrap_err()), 2);
        assert_eq!(line_of(parse_str("\n\nT = one").unwrap_err()), 3);
        assert_eq!(line_of(parse_str("T = 1\nT = 2").unwrap_err()), 2);
        assert_eq!(line_of(parse_str("corrector = yes").unwrap_err()), 1);
        assert_eq!(line_of(parse_str("T 1").unwrap_err()), 1);
        assert_eq!(line_of(parse_str("external.kind = radial3").unwrap_err()), 1);
        assert_eq!(line_of(parse_str("external.kind = quad").unwrap_err()), 1);
        assert_eq!(line_of(parse_str("T = 1\ninitial.delta = 1.5").unwrap_err()), 2);
        assert_eq!(line_of(parse_str("dt_ode = 0.1").unwrap_err()), 1);
        // the reduced solver refuses non-symmetric fields
        assert_eq!(line_of(parse_str("external.kind = swirl4\nexternal.coefficient = 0.5").unwrap_err()), 1);
    }

    #[test]
    fn comments_and_whitespace() {
        let c = parse_str("  T   =  1   # horizon\ndt=0.05\nscheme = transport # note\n").unwrap();
        assert_eq!((c.t_end, c.dt, c.scheme), (1.0, 0.05, Scheme::Transport));
    }

    #[test]
    fn echo_round_trips() {
        let text = "T = 1\ndt = 0.025\ndt_ode = 0.0125\nexternal.kind = radial3\nexternal.schedule = 0:0.1, 1:0.2\n\
                    tail.exponent = inf\ngrid.n_r = 64\ngrid.n_r_inner = 20\nbackground.W = 0.8\ngrid.u_max = 1.4\n\
                    audit.seed = 9\nsolver.clip = true\n";
        let c = parse_str(text).unwrap();
        assert!(c.tail.exponent.is_infinite());
        let again = parse_str(&echo(&c)).unwrap();
        assert_eq!(echo(&again), echo(&c));
        assert_eq!(serde_json::to_value(&again).unwrap(), serde_json::to_value(&c).unwrap());
        assert_eq!(again.external, ExternalFieldSpec::Radial3(Schedule::new(vec![(0.0, 0.1), (1.0, 0.2)]).unwrap()));
    }

    #[test]
    fn every_key_is_documented_once() {
        for (i, (k, _)) in KEYS.iter().enumerate() {
            assert!(KEYS[i + 1..].iter().all(|(o, _)| o != k), "{k}");
        }
        let c = parse_str(&echo(&SimConfig::default())).unwrap();
        assert_eq!(echo(&c), echo(&SimConfig::default()));
    }
}
