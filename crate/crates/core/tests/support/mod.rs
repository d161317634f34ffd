//! Test oracles shared by the integration suites.
#![allow(dead_code)]

use pausebench::labels::{PauseEvent, PauseType};
use rand::Rng;

pub mod checks;

/// Central finite difference of `f` at `x` along every coordinate.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero entries from
/// turning round-off into large relative errors.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (usize, f64) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n, floor))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best })
}

pub fn random_pause(rng: &mut impl Rng) -> PauseType {
    PauseType::PAUSES[rng.random_range(0..3)]
}

/// Sorted, disjoint events inside `[0, frames)`.
pub fn random_events(rng: &mut impl Rng, max_events: usize, frames: usize) -> Vec<PauseEvent> {
    let n = rng.random_range(0..=max_events);
    let mut out = Vec::new();
    let mut t = rng.random_range(0..20);
    for _ in 0..n {
        let len = rng.random_range(3..40);
        if t + len >= frames {
            break;
        }
        out.push(PauseEvent::new(t, t + len, random_pause(rng)));
        t += len + rng.random_range(0..30);
    }
    out
}
