//! Event-level scoring: one-to-one matching of predicted to reference events
//! under boundary-tolerance and overlap constraints.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::labels::{PauseEvent, PauseType};
use crate::protocol::{MIN_OVERLAP_RATIO, TOLERANCE_FRAMES};

/// Largest side the exhaustive matcher accepts.
pub const ORACLE_MAX_EVENTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub tolerance_frames: usize,
    /// Fraction of the reference event's duration that must overlap.
    pub min_overlap_ratio: f64,
    /// Require both onset and offset within tolerance (otherwise either).
    #[serde(default = "default_true")]
    pub require_both_boundaries: bool,
}

fn default_true() -> bool {
    true
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            tolerance_frames: TOLERANCE_FRAMES,
            min_overlap_ratio: MIN_OVERLAP_RATIO,
            require_both_boundaries: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_overlap_ratio > 0.0 && self.min_overlap_ratio <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "overlap ratio {} outside (0, 1]",
                self.min_overlap_ratio
            )));
        }
        Ok(())
    }

    /// Whether `pred` may be paired with `gt`.
    pub fn feasible(&self, gt: &PauseEvent, pred: &PauseEvent) -> bool {
        let tol = self.tolerance_frames;
        let on = gt.onset.abs_diff(pred.onset) <= tol;
        let off = gt.offset.abs_diff(pred.offset) <= tol;
        let bounds = if self.require_both_boundaries {
            on && off
        } else {
            on || off
        };
        bounds && gt.overlap(pred) as f64 >= self.min_overlap_ratio * gt.len() as f64
    }
}

fn boundary_distance(gt: &PauseEvent, pred: &PauseEvent) -> usize {
    gt.onset.abs_diff(pred.onset) + gt.offset.abs_diff(pred.offset)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPair {
    pub gt_index: usize,
    pub pred_index: usize,
    pub gt: PauseEvent,
    pub pred: PauseEvent,
    pub label_agree: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

impl MatchResult {
    fn from_assignment(gt: &[PauseEvent], pred: &[PauseEvent], mut chosen: Vec<(usize, usize)>) -> Self {
        chosen.sort_unstable();
        let mut gt_used = vec![false; gt.len()];
        let mut pred_used = vec![false; pred.len()];
        let pairs = chosen
            .into_iter()
            .map(|(g, p)| {
                gt_used[g] = true;
                pred_used[p] = true;
                MatchPair {
                    gt_index: g,
                    pred_index: p,
                    gt: gt[g],
                    pred: pred[p],
                    label_agree: gt[g].ptype == pred[p].ptype,
                }
            })
            .collect();
        let unused = |v: Vec<bool>| v.iter().enumerate().filter(|(_, u)| !**u).map(|(i, _)| i).collect();
        Self {
            pairs,
            unmatched_gt: unused(gt_used),
            unmatched_pred: unused(pred_used),
        }
    }

    pub fn agreeing_pairs(&self) -> usize {
        self.pairs.iter().filter(|p| p.label_agree).count()
    }

    pub fn total_distance(&self) -> usize {
        self.pairs.iter().map(|p| boundary_distance(&p.gt, &p.pred)).sum()
    }
}

/// Greedy one-to-one matching: feasible pairs are consumed in order of label
/// agreement, then boundary distance, then overlap.
pub fn greedy_match(gt: &[PauseEvent], pred: &[PauseEvent], cfg: &MatchConfig) -> MatchResult {
    let mut cands: Vec<(bool, usize, usize, usize, usize)> = Vec::new();
    for (g, ge) in gt.iter().enumerate() {
        for (p, pe) in pred.iter().enumerate() {
            if cfg.feasible(ge, pe) {
                cands.push((ge.ptype == pe.ptype, boundary_distance(ge, pe), ge.overlap(pe), g, p));
            }
        }
    }
    cands.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(b.2.cmp(&a.2))
            .then(a.3.cmp(&b.3))
            .then(a.4.cmp(&b.4))
    });
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut chosen = Vec::new();
    for (_, _, _, g, p) in cands {
        if !gt_used[g] && !pred_used[p] {
            gt_used[g] = true;
            pred_used[p] = true;
            chosen.push((g, p));
        }
    }
    MatchResult::from_assignment(gt, pred, chosen)
}

/// Exhaustive matching maximizing (label-agreeing pairs, pairs, -boundary distance).
pub fn oracle_match(gt: &[PauseEvent], pred: &[PauseEvent], cfg: &MatchConfig) -> Result<MatchResult> {
    if gt.len() > ORACLE_MAX_EVENTS || pred.len() > ORACLE_MAX_EVENTS {
        return Err(Error::InstanceTooLarge {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    /// (agreeing pairs, pairs, negated boundary distance); larger is better.
    type Score = (usize, usize, i64);
    struct Search<'a> {
        gt: &'a [PauseEvent],
        pred: &'a [PauseEvent],
        cfg: &'a MatchConfig,
        used: Vec<bool>,
        current: Vec<(usize, usize)>,
        best: Option<(Score, Vec<(usize, usize)>)>,
    }
    impl Search<'_> {
        fn score(&self) -> Score {
            let agree = self
                .current
                .iter()
                .filter(|(g, p)| self.gt[*g].ptype == self.pred[*p].ptype)
                .count();
            let dist: usize = self
                .current
                .iter()
                .map(|(g, p)| boundary_distance(&self.gt[*g], &self.pred[*p]))
                .sum();
            (agree, self.current.len(), -(dist as i64))
        }

        fn go(&mut self, g: usize) {
            if g == self.gt.len() {
                let s = self.score();
                if self.best.as_ref().is_none_or(|(b, _)| s > *b) {
                    self.best = Some((s, self.current.clone()));
                }
                return;
            }
            for p in 0..self.pred.len() {
                if !self.used[p] && self.cfg.feasible(&self.gt[g], &self.pred[p]) {
                    self.used[p] = true;
                    self.current.push((g, p));
                    self.go(g + 1);
                    self.current.pop();
                    self.used[p] = false;
                }
            }
            self.go(g + 1);
        }
    }
    let mut search = Search {
        gt,
        pred,
        cfg,
        used: vec![false; pred.len()],
        current: Vec::new(),
        best: None,
    };
    search.go(0);
    let chosen = search.best.map(|(_, c)| c).unwrap_or_default();
    Ok(MatchResult::from_assignment(gt, pred, chosen))
}

/// An accuracy value, or "n/a" when there is nothing to score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Accuracy {
    Value(f64),
    NotApplicable,
}

impl Accuracy {
    pub fn from_counts(correct: usize, total: usize) -> Self {
        if total == 0 {
            Accuracy::NotApplicable
        } else {
            Accuracy::Value(correct as f64 / total as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Accuracy::Value(v) => Some(v),
            Accuracy::NotApplicable => None,
        }
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Accuracy::Value(v) => write!(f, "{v:.4}"),
            Accuracy::NotApplicable => f.write_str("n/a"),
        }
    }
}

impl Serialize for Accuracy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Accuracy::Value(v) => s.serialize_f64(*v),
            Accuracy::NotApplicable => s.serialize_str("n/a"),
        }
    }
}

impl<'de> Deserialize<'de> for Accuracy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Accuracy::Value(v)),
            Raw::Text(t) if t == "n/a" => Ok(Accuracy::NotApplicable),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad accuracy {t:?}"))),
        }
    }
}

/// Summable event counts; accuracies are derived from these.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    /// Reference events per pause type, indexed `S`, `B`, `BS`.
    pub gt_events: [usize; 3],
    /// Label-agreeing pairs per reference type.
    pub correct: [usize; 3],
    pub pairs: usize,
    pub pred_events: usize,
}

impl MatchCounts {
    pub fn from_result(result: &MatchResult, gt: &[PauseEvent]) -> Self {
        let mut c = MatchCounts {
            pairs: result.pairs.len(),
            pred_events: result.pairs.len() + result.unmatched_pred.len(),
            ..Default::default()
        };
        for e in gt {
            if e.ptype.is_pause() {
                c.gt_events[e.ptype.index() - 1] += 1;
            }
        }
        for p in result.pairs.iter().filter(|p| p.label_agree) {
            c.correct[p.gt.ptype.index() - 1] += 1;
        }
        c
    }

    pub fn total_gt(&self) -> usize {
        self.gt_events.iter().sum()
    }

    pub fn total_correct(&self) -> usize {
        self.correct.iter().sum()
    }

    /// Overall accuracy, zero when there are no reference events.
    pub fn overall_fraction(&self) -> f64 {
        self.overall().value().unwrap_or(0.0)
    }

    pub fn overall(&self) -> Accuracy {
        Accuracy::from_counts(self.total_correct(), self.total_gt())
    }

    pub fn per_type(&self, ptype: PauseType) -> Accuracy {
        match ptype {
            PauseType::O => Accuracy::NotApplicable,
            t => Accuracy::from_counts(self.correct[t.index() - 1], self.gt_events[t.index() - 1]),
        }
    }

    pub fn accuracy(&self) -> EventAccuracy {
        EventAccuracy {
            per_type: PauseType::PAUSES
                .iter()
                .map(|&t| (t.name().to_string(), self.per_type(t)))
                .collect(),
            overall: self.overall(),
            counts: *self,
        }
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        for i in 0..3 {
            self.gt_events[i] += o.gt_events[i];
            self.correct[i] += o.correct[i];
        }
        self.pairs += o.pairs;
        self.pred_events += o.pred_events;
    }
}

impl std::iter::Sum for MatchCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut acc = MatchCounts::default();
        for c in iter {
            acc += c;
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventAccuracy {
    pub per_type: BTreeMap<String, Accuracy>,
    pub overall: Accuracy,
    pub counts: MatchCounts,
}

/// Recall-style accuracy: label-agreeing pairs over reference events, per type and overall.
pub fn event_accuracy(result: &MatchResult, gt: &[PauseEvent]) -> EventAccuracy {
    MatchCounts::from_result(result, gt).accuracy()
}

#[cfg(test)]
mod tests {
    use super::*;
    use PauseType::*;

    fn ev(on: usize, off: usize, t: PauseType) -> PauseEvent {
        PauseEvent::new(on, off, t)
    }

    #[test]
    fn identical_lists_match_fully() {
        let gt = vec![ev(0, 10, S), ev(20, 40, B), ev(50, 90, BS)];
        let m = greedy_match(&gt, &gt, &MatchConfig::default());
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|p| p.label_agree));
        assert!(m.unmatched_gt.is_empty() && m.unmatched_pred.is_empty());
    }

    #[test]
    fn shift_beyond_tolerance_is_unmatched() {
        let gt = vec![ev(100, 150, B)];
        let m = greedy_match(&gt, &[ev(111, 161, B)], &MatchConfig::default());
        assert!(m.pairs.is_empty());
        let m = greedy_match(&gt, &[ev(110, 160, B)], &MatchConfig::default());
        assert_eq!(m.pairs.len(), 1);
    }

    #[test]
    fn either_boundary_mode() {
        let gt = vec![ev(100, 150, B)];
        let pred = vec![ev(100, 165, B)];
        assert!(greedy_match(&gt, &pred, &MatchConfig::default()).pairs.is_empty());
        let cfg = MatchConfig {
            require_both_boundaries: false,
            ..Default::default()
        };
        assert_eq!(greedy_match(&gt, &pred, &cfg).pairs.len(), 1);
    }

    #[test]
    fn label_agreement_wins() {
        let gt = vec![ev(100, 130, S)];
        let pred = vec![ev(100, 130, B), ev(105, 135, S)];
        let m = greedy_match(&gt, &pred, &MatchConfig::default());
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].pred_index, 1);
        assert_eq!(m.unmatched_pred, vec![0]);
    }

    #[test]
    fn overlap_floor_uses_reference_duration() {
        // tolerance 10 allows a short prediction inside a 30-frame event,
        // overlap 8 < 0.3 * 30
        let cfg = MatchConfig {
            tolerance_frames: 30,
            ..Default::default()
        };
        assert!(!cfg.feasible(&ev(0, 30, S), &ev(22, 30, S)));
        assert!(cfg.feasible(&ev(0, 30, S), &ev(21, 30, S)));
    }

    #[test]
    fn accuracy_examples() {
        let gt = vec![ev(0, 10, S), ev(20, 40, B)];
        let m = greedy_match(&gt, &[ev(0, 10, S)], &MatchConfig::default());
        let a = event_accuracy(&m, &gt);
        assert_eq!(a.per_type["S"], Accuracy::Value(1.0));
        assert_eq!(a.per_type["B"], Accuracy::Value(0.0));
        assert_eq!(a.per_type["BS"], Accuracy::NotApplicable);
        assert_eq!(a.overall, Accuracy::Value(0.5));

        let gt = vec![ev(0, 10, S), ev(20, 30, S), ev(40, 60, BS)];
        let pred = vec![ev(0, 10, S), ev(20, 30, B), ev(40, 60, BS)];
        let a = event_accuracy(&greedy_match(&gt, &pred, &MatchConfig::default()), &gt);
        assert_eq!(a.per_type["S"], Accuracy::Value(0.5));
        assert_eq!(a.per_type["BS"], Accuracy::Value(1.0));
        assert_eq!(a.overall, Accuracy::Value(2.0 / 3.0));
    }

    #[test]
    fn not_applicable_serializes_as_text() {
        let s = serde_json::to_string(&Accuracy::NotApplicable).unwrap();
        assert_eq!(s, "\"n/a\"");
        assert_eq!(serde_json::from_str::<Accuracy>(&s).unwrap(), Accuracy::NotApplicable);
        assert_eq!(serde_json::from_str::<Accuracy>("0.25").unwrap(), Accuracy::Value(0.25));
    }

    #[test]
    fn oracle_basics() {
        let gt = vec![ev(0, 10, S), ev(20, 40, B)];
        let m = oracle_match(&gt, &[], &MatchConfig::default()).unwrap();
        assert!(m.pairs.is_empty());
        let pred = vec![ev(1, 11, S), ev(22, 41, B)];
        let o = oracle_match(&gt, &pred, &MatchConfig::default()).unwrap();
        assert_eq!(o, greedy_match(&gt, &pred, &MatchConfig::default()));
        let big = vec![ev(0, 1, S); 11];
        assert!(matches!(
            oracle_match(&big, &[], &MatchConfig::default()),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn counts_are_additive() {
        let gt = vec![ev(0, 10, S), ev(20, 40, B)];
        let m = greedy_match(&gt, &gt, &MatchConfig::default());
        let c = MatchCounts::from_result(&m, &gt);
        let total: MatchCounts = [c, c].into_iter().sum();
        assert_eq!(total.total_gt(), 4);
        assert_eq!(total.total_correct(), 4);
    }
}
