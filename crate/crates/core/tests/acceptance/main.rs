//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=5,6` restricts the run to the listed criteria.

mod desk;
mod exact;
mod support;

use std::process::ExitCode;
use std::time::{Duration, Instant};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Check = fn(&mut support::Shared) -> Outcome;

const CRITERIA: [(u32, &str, u64, Check); 12] = [
    (1, "auroc oracle", 10, exact::auroc_oracle),
    (2, "gradient check", 60, exact::gradient_check),
    (3, "parser round trips", 10, exact::parser_round_trips),
    (4, "binning exactness", 5, exact::binning_exactness),
    (5, "foundation vs scratch", 0, desk::foundation_vs_scratch),
    (6, "multitask fine-tuning", 0, desk::multitask),
    (7, "glyco baselines", 120, desk::glyco_baselines),
    (8, "gbdt correctness", 60, exact::gbdt_correctness),
    (9, "pca correctness", 10, exact::pca_correctness),
    (10, "schedule, adam, bce", 5, exact::closed_forms),
    (11, "determinism", 5 * 60, desk::determinism),
    (12, "denovo overfit", 120, exact::denovo_overfit),
];

fn selected() -> Option<Vec<u32>> {
    let only = std::env::var("ACCEPTANCE_ONLY").ok()?;
    Some(only.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    let only = selected();
    let mut shared = support::Shared::default();
    let mut failed = 0;
    for (id, name, limit, check) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut shared)))
            .unwrap_or_else(|_| Outcome::new(false, "panicked"));
        let took = start.elapsed();
        // Limit 0: the check times its own budgeted phase.
        let in_time = limit == 0 || took <= Duration::from_secs(limit);
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        let late = if in_time { "" } else { " (over time limit)" };
        println!("criterion {id:>2} {verdict} {name}: {}{late} [{:.1}s]", out.detail, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
