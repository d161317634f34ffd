//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod support;

use support::checks::{self, Verdict};

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 9] = [
        ("loss-gradients", checks::loss_gradient_suite),
        ("loss-identities", checks::loss_identities),
        ("model-gradients", checks::model_gradient_suite),
        ("matching-oracle", || checks::matching_oracle_suite(1000, 41)),
        ("postprocessing", checks::postproc_suite),
        ("pipeline-equivalence", checks::pipeline_equivalence),
        ("end-to-end", checks::end_to_end),
        ("protocol-constants", checks::protocol_constants),
        ("majority-vote", checks::majority_vote_exhaustive),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let v = check();
        if !v.passed {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {} ({:.1} s)",
            if v.passed { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            v.elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
