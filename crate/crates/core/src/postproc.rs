//! Turning raw frame-wise outputs into cleaned label sequences.
//!
//! Regression outputs go through a zero-phase low-pass filter, a threshold
//! map onto the four codes and a merge of low-level runs into neighbouring
//! higher-level ones. Classification outputs are cleaned by gap bridging,
//! minimum-length deletion and majority unification.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::annotation::vote_winner;
use crate::error::{Error, Result};
use crate::evaluation::{greedy_match, MatchConfig, MatchCounts};
use crate::labels::{events_from_labels, FrameLabelSeq, PauseEvent, PauseType};
use crate::protocol::{FRAME_RATE_HZ, TAIL_MASK_FRAMES};

/// Upper end of the regression target range (the `BS` code).
pub const MAX_CODE: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSpec {
    Fixed([f64; 3]),
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocConfig {
    pub cutoff_hz: f64,
    pub thresholds: ThresholdSpec,
    pub sweep_step: f64,
    pub merge_gap_frames: usize,
    pub min_event_frames: usize,
    pub bridge_gap_frames: usize,
    pub mask_tail_frames: usize,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 0.05,
            thresholds: ThresholdSpec::Sweep,
            sweep_step: 0.05,
            merge_gap_frames: 5,
            min_event_frames: 3,
            bridge_gap_frames: 2,
            mask_tail_frames: TAIL_MASK_FRAMES,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = FRAME_RATE_HZ as f64 / 2.0;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::InvalidParameter(format!(
                "cutoff {} Hz outside (0, {nyquist})",
                self.cutoff_hz
            )));
        }
        if let ThresholdSpec::Fixed(t) = self.thresholds {
            check_thresholds(t)?;
        }
        if !(self.sweep_step > 0.0 && self.sweep_step <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sweep step {} outside (0, 1]",
                self.sweep_step
            )));
        }
        Ok(())
    }
}

pub fn check_thresholds(t: [f64; 3]) -> Result<()> {
    if 0.0 <= t[0] && t[0] < t[1] && t[1] < t[2] && t[2] <= MAX_CODE {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "thresholds {t:?} must satisfy 0 <= t1 < t2 < t3 <= 3"
        )))
    }
}

/// Second-order Butterworth section in transposed direct form II.
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn butterworth_lowpass(cutoff_hz: f64, rate_hz: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * cutoff_hz / rate_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cos) / a0;
        Self {
            b: [b1 / 2.0, b1, b1 / 2.0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Filters `x` starting from the steady state for a constant input `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let u = x[0];
        let mut z2 = u * (b2 - a2);
        let mut z1 = u * (b1 - a1) + z2;
        for v in x.iter_mut() {
            let xi = *v;
            let y = b0 * xi + z1;
            z1 = b1 * xi - a1 * y + z2;
            z2 = b2 * xi - a2 * y;
            *v = y;
        }
    }
}

/// Zero-phase low-pass: one Butterworth biquad run forward then backward,
/// with odd reflection padding at both ends.
pub fn lowpass(seq: &[f64], cutoff_hz: f64, rate_hz: f64) -> Result<Vec<f64>> {
    if seq.len() < 8 {
        return Err(Error::InvalidParameter(format!(
            "low-pass needs at least 8 samples, got {}",
            seq.len()
        )));
    }
    let nyquist = rate_hz / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::InvalidParameter(format!(
            "cutoff {cutoff_hz} Hz outside (0, {nyquist})"
        )));
    }
    let n = seq.len();
    let pad = ((3.0 * rate_hz / cutoff_hz).ceil() as usize).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * seq[0] - seq[i]));
    ext.extend_from_slice(seq);
    ext.extend((1..=pad).map(|i| 2.0 * seq[n - 1] - seq[n - 1 - i]));
    let bq = Biquad::butterworth_lowpass(cutoff_hz, rate_hz);
    bq.run(&mut ext);
    ext.reverse();
    bq.run(&mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumProfile {
    pub freq_hz: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl SpectrumProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,magnitude\n");
        for (f, m) in self.freq_hz.iter().zip(&self.magnitude) {
            out.push_str(&format!("{f},{m}\n"));
        }
        out
    }

    /// Frequency of the point farthest from the chord joining the first and
    /// last points of the (range-normalized) curve.
    pub fn elbow_hz(&self) -> Option<f64> {
        let n = self.freq_hz.len();
        if n < 3 {
            return None;
        }
        let (f0, f1) = (self.freq_hz[0], self.freq_hz[n - 1]);
        let lo = self.magnitude.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.magnitude.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let pt = |i: usize| ((self.freq_hz[i] - f0) / (f1 - f0), (self.magnitude[i] - lo) / span);
        let (x0, y0) = pt(0);
        let (x1, y1) = pt(n - 1);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let norm = (dx * dx + dy * dy).sqrt();
        (1..n - 1)
            .map(|i| {
                let (x, y) = pt(i);
                (i, ((x - x0) * dy - (y - y0) * dx).abs() / norm)
            })
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| self.freq_hz[i])
    }
}

/// Mean one-sided DFT magnitude (scaled by `1/T`) across equal-length sequences.
pub fn spectrum_profile(seqs: &[Vec<f64>], rate_hz: f64) -> Result<SpectrumProfile> {
    let first = seqs.first().ok_or(Error::EmptyInput("spectrum input"))?;
    let n = first.len();
    if n == 0 {
        return Err(Error::EmptyInput("spectrum sequence"));
    }
    if let Some(bad) = seqs.iter().find(|s| s.len() != n) {
        return Err(Error::LengthMismatch {
            what: "spectrum sequence lengths",
            left: n,
            right: bad.len(),
        });
    }
    let bins = n / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut magnitude = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for s in seqs {
        for (b, &v) in buf.iter_mut().zip(s) {
            *b = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (m, c) in magnitude.iter_mut().zip(&buf) {
            *m += c.norm() / n as f64;
        }
    }
    let count = seqs.len() as f64;
    magnitude.iter_mut().for_each(|m| *m /= count);
    let freq_hz = (0..bins).map(|k| k as f64 * rate_hz / n as f64).collect();
    Ok(SpectrumProfile { freq_hz, magnitude })
}

/// Frame class = number of thresholds strictly below the value.
pub fn regression_to_classes(values: &[f64], thresholds: [f64; 3]) -> Result<FrameLabelSeq> {
    check_thresholds(thresholds)?;
    Ok(FrameLabelSeq::new(classes_for(values, thresholds)).expect("default rate"))
}

fn classes_for(values: &[f64], t: [f64; 3]) -> Vec<PauseType> {
    values
        .iter()
        .map(|&v| PauseType::ALL[t.iter().filter(|&&th| th < v).count()])
        .collect()
}

/// Absorbs `S` runs into an adjacent `B`/`BS` run at most `gap` frames away,
/// filling the gap; repeated until nothing changes so chains of `S` runs
/// cascade into the higher-level run.
pub fn merge_low_high(seq: &FrameLabelSeq, gap: usize) -> FrameLabelSeq {
    let mut labels = seq.labels().to_vec();
    loop {
        let events = events_from_labels(&labels);
        let mut changed = false;
        for (i, ev) in events.iter().enumerate() {
            if ev.ptype != PauseType::S {
                continue;
            }
            let left = i
                .checked_sub(1)
                .map(|j| &events[j])
                .filter(|l| l.ptype >= PauseType::B && ev.onset - l.offset <= gap);
            let right = events
                .get(i + 1)
                .filter(|r| r.ptype >= PauseType::B && r.onset - ev.offset <= gap);
            let target = match (left, right) {
                (Some(l), Some(r)) => {
                    let (dl, dr) = (ev.onset - l.offset, r.onset - ev.offset);
                    if dl < dr || (dl == dr && l.ptype >= r.ptype) {
                        Some((l.offset, ev.offset, l.ptype))
                    } else {
                        Some((ev.onset, r.onset, r.ptype))
                    }
                }
                (Some(l), None) => Some((l.offset, ev.offset, l.ptype)),
                (None, Some(r)) => Some((ev.onset, r.onset, r.ptype)),
                (None, None) => None,
            };
            if let Some((from, to, ptype)) = target {
                labels[from..to].iter_mut().for_each(|l| *l = ptype);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    FrameLabelSeq::with_rate(labels, seq.rate_hz()).expect("rate unchanged")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub bridge_gap_frames: usize,
    pub min_event_frames: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            bridge_gap_frames: 2,
            min_event_frames: 3,
        }
    }
}

impl From<&PostprocConfig> for CleanConfig {
    fn from(c: &PostprocConfig) -> Self {
        Self {
            bridge_gap_frames: c.bridge_gap_frames,
            min_event_frames: c.min_event_frames,
        }
    }
}

/// Non-zero segments as `(start, end)` ranges.
fn segments(labels: &[PauseType]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, l) in labels.iter().enumerate() {
        match (l.is_pause(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, labels.len()));
    }
    out
}

fn clean_pass(labels: &mut [PauseType], cfg: CleanConfig) {
    // bridge short zero gaps between runs of the same label
    let events = events_from_labels(labels);
    for pair in events.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let gap = b.onset - a.offset;
        if a.ptype == b.ptype && gap > 0 && gap <= cfg.bridge_gap_frames {
            labels[a.offset..b.onset].iter_mut().for_each(|l| *l = a.ptype);
        }
    }
    for (s, e) in segments(labels) {
        if e - s < cfg.min_event_frames {
            labels[s..e].iter_mut().for_each(|l| *l = PauseType::O);
            continue;
        }
        let mut votes = [0usize; 4];
        for l in &labels[s..e] {
            votes[l.index()] += 1;
        }
        let winner = vote_winner(&votes);
        labels[s..e].iter_mut().for_each(|l| *l = winner);
    }
}

/// Bridge, delete short segments, unify to the majority label; repeated to a
/// fixed point so the result is idempotent.
pub fn clean_classification(seq: &FrameLabelSeq, cfg: CleanConfig) -> FrameLabelSeq {
    let mut labels = seq.labels().to_vec();
    loop {
        let before = labels.clone();
        clean_pass(&mut labels, cfg);
        if labels == before {
            break;
        }
    }
    FrameLabelSeq::with_rate(labels, seq.rate_hz()).expect("rate unchanged")
}

fn check_mask(mask: usize, frames: usize) -> Result<()> {
    if mask >= frames {
        return Err(Error::MaskTooLong { mask, frames });
    }
    Ok(())
}

/// Drops the last `mask` frames.
pub fn mask_tail(seq: &FrameLabelSeq, mask: usize) -> Result<FrameLabelSeq> {
    check_mask(mask, seq.len())?;
    seq.slice(0, seq.len() - mask)
}

/// Drops events inside the last `mask` of `frames` frames and truncates those straddling it.
pub fn mask_tail_events(events: &[PauseEvent], mask: usize, frames: usize) -> Result<Vec<PauseEvent>> {
    check_mask(mask, frames)?;
    let end = frames - mask;
    Ok(events
        .iter()
        .filter(|e| e.onset < end)
        .map(|e| PauseEvent::new(e.onset, e.offset.min(end), e.ptype))
        .collect())
}

/// One validation item for the threshold sweep: filtered regression output
/// and the ground-truth labels of the same frames.
#[derive(Clone, Debug)]
pub struct SweepItem {
    pub filtered: Vec<f64>,
    pub truth: FrameLabelSeq,
}

/// Regression branch after filtering: thresholds, merge, tail mask.
pub fn regression_labels(filtered: &[f64], thresholds: [f64; 3], cfg: &PostprocConfig) -> Result<FrameLabelSeq> {
    let seq = regression_to_classes(filtered, thresholds)?;
    let merged = merge_low_high(&seq, cfg.merge_gap_frames);
    mask_tail(&merged, cfg.mask_tail_frames)
}

/// Grid values `0, step, 2*step, ..., 3`.
pub fn sweep_grid(step: f64) -> Vec<f64> {
    let n = (MAX_CODE / step).round() as usize;
    (0..=n).map(|i| (i as f64 * step).min(MAX_CODE)).collect()
}

/// Threshold triple maximizing overall event accuracy on `items`; ties go to
/// the lexicographically smallest triple.
pub fn sweep_thresholds(
    items: &[SweepItem],
    cfg: &PostprocConfig,
    mcfg: &MatchConfig,
) -> Result<([f64; 3], f64)> {
    if items.is_empty() {
        return Err(Error::SweepWithoutValidation);
    }
    let grid = sweep_grid(cfg.sweep_step);
    let truths: Vec<Vec<PauseEvent>> = items
        .iter()
        .map(|it| {
            let masked = mask_tail(&it.truth, cfg.mask_tail_frames)?;
            Ok(events_from_labels(masked.labels()))
        })
        .collect::<Result<_>>()?;
    let mut best: Option<([f64; 3], f64)> = None;
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            for k in j + 1..grid.len() {
                let t = [grid[i], grid[j], grid[k]];
                let mut counts = MatchCounts::default();
                for (it, gt) in items.iter().zip(&truths) {
                    let pred = regression_labels(&it.filtered, t, cfg)?;
                    let m = greedy_match(gt, &events_from_labels(pred.labels()), mcfg);
                    counts += MatchCounts::from_result(&m, gt);
                }
                let score = counts.overall_fraction();
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((t, score));
                }
            }
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("sweep grid has fewer than 3 values".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(codes: &[i64]) -> FrameLabelSeq {
        FrameLabelSeq::from_codes(codes).unwrap()
    }

    fn codes(s: &FrameLabelSeq) -> Vec<u8> {
        s.codes()
    }

    fn gain(freq: f64, cutoff: f64) -> f64 {
        let n = (40.0 * 50.0 / freq.min(cutoff)) as usize;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 50.0).sin())
            .collect();
        let y = lowpass(&x, cutoff, 50.0).unwrap();
        let mid = &y[n / 4..3 * n / 4];
        let amp = mid.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        amp
    }

    #[test]
    fn lowpass_passband_and_stopband() {
        assert!(gain(0.01, 0.05) >= 0.95);
        assert!(gain(0.5, 0.05) <= 0.1);
        assert!(gain(2.0, 1.0) <= 0.3);
        assert!(gain(0.2, 1.0) >= 0.95);
    }

    #[test]
    fn lowpass_keeps_constants_and_rejects_bad_input() {
        let y = lowpass(&[1.7; 40], 0.05, 50.0).unwrap();
        assert!(y.iter().all(|v| (v - 1.7).abs() < 1e-9));
        assert!(lowpass(&[0.0; 7], 0.05, 50.0).is_err());
        assert!(lowpass(&[0.0; 20], 25.0, 50.0).is_err());
    }

    #[test]
    fn lowpass_is_zero_phase() {
        // a symmetric bump stays centred
        let x: Vec<f64> = (0..201).map(|i| (-((i as f64 - 100.0) / 10.0).powi(2)).exp()).collect();
        let y = lowpass(&x, 1.0, 50.0).unwrap();
        let peak = y
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        assert_eq!(peak, 100);
    }

    #[test]
    fn spectrum_examples() {
        let p = spectrum_profile(&[vec![2.0; 16]], 50.0).unwrap();
        assert!((p.magnitude[0] - 2.0).abs() < 1e-12);
        assert!(p.magnitude[1..].iter().all(|&m| m < 1e-12));
        assert_eq!(p.freq_hz.len(), 9);
        let sine: Vec<f64> = (0..64)
            .map(|i| (2.0 * std::f64::consts::PI * 4.0 * i as f64 / 64.0).cos())
            .collect();
        let p = spectrum_profile(std::slice::from_ref(&sine), 64.0).unwrap();
        let max = p.magnitude.iter().cloned().fold(0.0, f64::max);
        assert_eq!(p.magnitude.iter().position(|&m| m == max), Some(4));
        assert!((p.freq_hz[4] - 4.0).abs() < 1e-12);
        // averaging
        let other: Vec<f64> = (0..64).map(|i| (i % 3) as f64).collect();
        let both = spectrum_profile(&[sine.clone(), other.clone()], 64.0).unwrap();
        let a = spectrum_profile(&[sine], 64.0).unwrap();
        let b = spectrum_profile(&[other], 64.0).unwrap();
        for k in 0..both.magnitude.len() {
            assert!((both.magnitude[k] - (a.magnitude[k] + b.magnitude[k]) / 2.0).abs() < 1e-12);
        }
        assert!(spectrum_profile(&[], 50.0).is_err());
        assert!(spectrum_profile(&[vec![1.0; 4], vec![1.0; 5]], 50.0).is_err());
    }

    #[test]
    fn elbow_of_a_knee_curve() {
        let freq_hz: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let magnitude = freq_hz.iter().map(|&f| if f <= 2.0 { 10.0 - 4.5 * f } else { 1.0 - 0.01 * f }).collect();
        let p = SpectrumProfile { freq_hz, magnitude };
        assert_eq!(p.elbow_hz(), Some(2.0));
    }

    #[test]
    fn threshold_mapping() {
        let t = [0.5, 1.5, 2.5];
        assert_eq!(codes(&regression_to_classes(&[1.7], t).unwrap()), vec![2]);
        assert_eq!(codes(&regression_to_classes(&[0.1, 0.2, -4.0], t).unwrap()), vec![0, 0, 0]);
        assert_eq!(codes(&regression_to_classes(&[0.6, 2.6, 9.0], t).unwrap()), vec![1, 3, 3]);
        assert!(regression_to_classes(&[1.0], [1.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn merge_examples() {
        assert_eq!(codes(&merge_low_high(&seq(&[1, 1, 0, 3, 3]), 5)), vec![3; 5]);
        assert_eq!(codes(&merge_low_high(&seq(&[0, 1, 1, 0, 0, 0]), 5)), vec![0, 1, 1, 0, 0, 0]);
        assert_eq!(codes(&merge_low_high(&seq(&[2, 2, 2]), 5)), vec![2, 2, 2]);
        // too far
        assert_eq!(
            codes(&merge_low_high(&seq(&[1, 0, 0, 0, 2]), 2)),
            vec![1, 0, 0, 0, 2]
        );
        // nearest side wins, ties go to the higher label
        assert_eq!(codes(&merge_low_high(&seq(&[2, 0, 1, 3]), 5)), vec![2, 0, 3, 3]);
        assert_eq!(codes(&merge_low_high(&seq(&[2, 0, 1, 0, 3]), 5)), vec![2, 0, 3, 3, 3]);
        // chains cascade
        assert_eq!(codes(&merge_low_high(&seq(&[1, 0, 1, 0, 2]), 1)), vec![2; 5]);
    }

    #[test]
    fn clean_examples() {
        let c = CleanConfig::default();
        assert_eq!(codes(&clean_classification(&seq(&[1, 0, 0, 1]), c)), vec![1, 1, 1, 1]);
        assert_eq!(codes(&clean_classification(&seq(&[0, 2, 2, 0]), c)), vec![0; 4]);
        assert_eq!(codes(&clean_classification(&seq(&[1, 1, 3, 1, 1]), c)), vec![1; 5]);
        // tie inside a segment resolves to the higher code
        assert_eq!(codes(&clean_classification(&seq(&[2, 2, 3, 3]), c)), vec![3; 4]);
        // a fixed point is reached even when unification enables a new bridge
        let x = seq(&[1, 1, 1, 2, 0, 1, 1, 1]);
        let once = clean_classification(&x, c);
        assert_eq!(clean_classification(&once, c), once);
    }

    #[test]
    fn tail_masking() {
        let s = FrameLabelSeq::zeros(750).unwrap();
        assert_eq!(mask_tail(&s, 50).unwrap().len(), 700);
        assert_eq!(mask_tail(&s, 0).unwrap(), s);
        assert!(matches!(mask_tail(&s, 750), Err(Error::MaskTooLong { .. })));
        let evs = vec![
            PauseEvent::new(10, 20, PauseType::B),
            PauseEvent::new(690, 749, PauseType::S),
            PauseEvent::new(710, 720, PauseType::BS),
        ];
        assert_eq!(
            mask_tail_events(&evs, 50, 750).unwrap(),
            vec![evs[0], PauseEvent::new(690, 700, PauseType::S)]
        );
        assert_eq!(mask_tail_events(&evs, 0, 750).unwrap(), evs);
    }

    #[test]
    fn grid_has_expected_values() {
        let g = sweep_grid(0.05);
        assert_eq!(g.len(), 61);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 3.0);
    }
}
