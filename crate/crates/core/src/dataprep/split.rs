use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::RecordingMeta;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Subject-disjoint train/val/test assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
    /// Achieved share of total duration per split.
    pub duration_shares: [f64; 3],
    /// Every share within 5 percentage points of its target.
    pub balanced: bool,
}

impl SplitSpec {
    pub fn split_of_subject(&self, subject: &str) -> Option<Split> {
        self.assignment.get(subject).copied()
    }

    pub fn split_of(&self, meta: &RecordingMeta) -> Option<Split> {
        self.split_of_subject(&meta.subject_id)
    }

    pub fn subjects_in(&self, split: Split) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

pub const BALANCE_TOLERANCE: f64 = 0.05;

/// Assigns whole subjects to splits so each split's share of total duration
/// approaches its target.
///
/// Subjects are visited largest-first (seeded shuffle breaks duration ties)
/// and each goes to the split currently furthest below its target duration.
pub fn split_by_subject<'a>(
    records: impl IntoIterator<Item = &'a RecordingMeta>,
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitSpec> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut per_subject: BTreeMap<String, f64> = BTreeMap::new();
    for meta in records {
        *per_subject.entry(meta.subject_id.clone()).or_default() += meta.duration_s;
    }
    if per_subject.len() < Split::ALL.len() {
        return Err(Error::NotEnoughSubjects {
            subjects: per_subject.len(),
            splits: Split::ALL.len(),
        });
    }
    let mut subjects: Vec<(String, f64)> = per_subject.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);
    subjects.sort_by(|a, b| b.1.total_cmp(&a.1));

    let total: f64 = subjects.iter().map(|s| s.1).sum();
    let mut filled = [0.0f64; 3];
    let mut slot = vec![0usize; subjects.len()];
    for (i, (_, dur)) in subjects.iter().enumerate() {
        let best = (0..3)
            .max_by(|&a, &b| {
                let da = fractions[a] * total - filled[a];
                let db = fractions[b] * total - filled[b];
                // earlier split wins ties
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("three splits");
        filled[best] += dur;
        slot[i] = best;
    }
    refine(&subjects, &mut slot, &mut filled, fractions, total);

    let assignment = subjects
        .iter()
        .zip(&slot)
        .map(|((subject, _), &s)| (subject.clone(), Split::ALL[s]))
        .collect();
    let duration_shares = filled.map(|f| f / total);
    let balanced = duration_shares
        .iter()
        .zip(fractions.iter())
        .all(|(s, f)| (s - f).abs() <= BALANCE_TOLERANCE);
    if !balanced {
        log::warn!("split is imbalanced: shares {duration_shares:?} vs targets {fractions:?}");
    }
    Ok(SplitSpec {
        fractions,
        seed,
        assignment,
        duration_shares,
        balanced,
    })
}

fn imbalance(filled: &[f64; 3], fractions: [f64; 3], total: f64) -> f64 {
    filled
        .iter()
        .zip(fractions.iter())
        .map(|(f, t)| (f / total - t).powi(2))
        .sum()
}

/// Single moves and pairwise swaps that strictly reduce the squared share
/// error, applied first-improvement until none is left. A split is never
/// emptied.
fn refine(
    subjects: &[(String, f64)],
    slot: &mut [usize],
    filled: &mut [f64; 3],
    fractions: [f64; 3],
    total: f64,
) {
    const MIN_GAIN: f64 = 1e-12;
    let mut members = [0usize; 3];
    slot.iter().for_each(|&s| members[s] += 1);
    let mut improved = true;
    let mut rounds = 0;
    while improved && rounds < 1000 {
        improved = false;
        rounds += 1;
        let current = imbalance(filled, fractions, total);
        'search: for i in 0..subjects.len() {
            let from = slot[i];
            for to in 0..3 {
                if to == from || members[from] == 1 {
                    continue;
                }
                let mut trial = *filled;
                trial[from] -= subjects[i].1;
                trial[to] += subjects[i].1;
                if imbalance(&trial, fractions, total) < current - MIN_GAIN {
                    *filled = trial;
                    slot[i] = to;
                    members[from] -= 1;
                    members[to] += 1;
                    improved = true;
                    break 'search;
                }
            }
            for j in i + 1..subjects.len() {
                let other = slot[j];
                if other == from {
                    continue;
                }
                let delta = subjects[i].1 - subjects[j].1;
                let mut trial = *filled;
                trial[from] -= delta;
                trial[other] += delta;
                if imbalance(&trial, fractions, total) < current - MIN_GAIN {
                    *filled = trial;
                    slot.swap(i, j);
                    improved = true;
                    break 'search;
                }
            }
        }
    }
}
