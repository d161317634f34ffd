//! Deterministic inputs for the benchmarks.

use ndarray::Array2;
use pausebench::features::AudioClip;
use pausebench::labels::{FrameLabelSeq, PauseEvent, PauseType};
use pausebench::protocol::SAMPLE_RATE_HZ;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noise with a slow amplitude envelope, `seconds` long at 16 kHz.
pub fn audio(seconds: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SAMPLE_RATE_HZ as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let env = 0.5 + 0.5 * (i as f64 / 4000.0).sin();
            env * rng.random_range(-1.0..1.0)
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE_HZ).expect("non-empty clip")
}

pub fn features(frames: usize, dims: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((frames, dims), |_| rng.random_range(-1.0..1.0))
}

/// Roughly `n` events per side with jittered boundaries, like a decent model.
pub fn event_pair(n: usize, seed: u64) -> (Vec<PauseEvent>, Vec<PauseEvent>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gt = Vec::with_capacity(n);
    let mut pred = Vec::with_capacity(n);
    let mut t = 10;
    for _ in 0..n {
        let len = rng.random_range(10..60);
        let ptype = PauseType::PAUSES[rng.random_range(0..3)];
        gt.push(PauseEvent::new(t, t + len, ptype));
        let on = t + rng.random_range(0..8);
        let off = (t + len + rng.random_range(0..8)).max(on + 1);
        let ptype = if rng.random_bool(0.8) { ptype } else { PauseType::PAUSES[rng.random_range(0..3)] };
        pred.push(PauseEvent::new(on, off, ptype));
        t += len + rng.random_range(30..80);
    }
    (gt, pred)
}

/// Frame labels with short runs and isolated spikes.
pub fn noisy_labels(frames: usize, seed: u64) -> FrameLabelSeq {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codes = Vec::with_capacity(frames);
    while codes.len() < frames {
        let run = rng.random_range(1..20);
        let code = if rng.random_bool(0.6) { 0 } else { rng.random_range(1..4) };
        codes.extend(std::iter::repeat_n(code, run));
    }
    codes.truncate(frames);
    FrameLabelSeq::from_codes(&codes).expect("valid codes")
}
