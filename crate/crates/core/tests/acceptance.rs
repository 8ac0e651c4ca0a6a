//! Acceptance suite: runs the reference configurations, evaluates A1-A10 at
//! their stated tolerances and prints one line per criterion.
//!
//! Criteria listed in KNOWN_FAILING are reported as FAIL but do not fail the
//! target; any other failure does, and so does a known failure that starts
//! passing (the list is then stale).

use std::process::ExitCode;
use std::time::Instant;

use vpsa_core::acceptance::{
    a10_injectivity, a1_steady, a2_radial_decay, a3_free_decay, a4_change_of_variables, a5_liouville, a6_jacobian, a7_det_b_scaling,
    a8_field_oracle, a9_decomposition, free_decay_config, radial_decay_config, steady_config, Status, Verdict, CRITERIA,
};
use vpsa_core::solver::run;

const KNOWN_FAILING: &[(&str, &str)] = &[
    ("A3", "the r^-6 tail sits below the 1e-14 fit floor over [100, 1000]"),
    ("A9", "terms I and II decay as r^-6, just outside the 4 +/- 2 window"),
];

fn main() -> ExitCode {
    // cargo passes test-name filters through; skip unless one selects this suite
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str()) || CRITERIA.iter().any(|c| c.0 == f)) {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let mut verdicts: Vec<Verdict> = Vec::new();

    let steady = run(steady_config()).expect("steady run");
    verdicts.push(a1_steady(&steady));

    let radial = run(radial_decay_config()).expect("radial run");
    verdicts.push(a2_radial_decay(&radial));
    let a9 = a9_decomposition(&radial, radial.t());

    let free = run(free_decay_config()).expect("free run");
    verdicts.push(a3_free_decay(&free));
    verdicts.push(a4_change_of_variables(&free.history, &free, 1.0));
    verdicts.push(a5_liouville(&free.history, 1.0));
    verdicts.push(a6_jacobian(&free.history, 1.0));
    verdicts.push(a7_det_b_scaling(&free.history, free.t()));
    verdicts.push(a8_field_oracle());
    verdicts.push(a9);
    verdicts.push(a10_injectivity(&free, free.t(), 7));

    let mut bad = Vec::new();
    for v in &verdicts {
        let known = KNOWN_FAILING.iter().find(|k| k.0 == v.id);
        match (v.status, known) {
            (Status::Pass, None) => println!("{}", v.line()),
            (Status::Pass, Some(_)) => {
                println!("{}", v.line());
                bad.push(format!("{} passes but is listed as known failing", v.id));
            }
            (_, Some((_, why))) => println!("{} [known: {why}]", v.line()),
            (_, None) => {
                println!("{}", v.line());
                bad.push(format!("{} {}", v.id, v.status.label()));
            }
        }
    }
    let passed = verdicts.iter().filter(|v| v.status == Status::Pass).count();
    println!("acceptance: {passed}/{} pass in {:.1}s", verdicts.len(), start.elapsed().as_secs_f64());
    if bad.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("unexpected: {}", bad.join("; "));
        ExitCode::FAILURE
    }
}
