//! Participant-level fold splits for cross-validated fine-tuning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ParticipantEntry, StoreError};
use crate::capture::GazeSample;
use crate::ids::{ParticipantId, SampleId};
use crate::seed;

/// Images drawn per fold for fine-tuning.
pub const DEFAULT_FINE_TUNE_DRAW: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<ParticipantId, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, p: &ParticipantId) -> Option<usize> {
        self.assignment.get(p).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<ParticipantId> {
        self.assignment.iter().filter(|(_, &f)| f == fold).map(|(p, _)| p.clone()).collect()
    }

    /// Eye-tracker wearers per fold.
    pub fn eyetracker_counts(&self, participants: &[ParticipantEntry]) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for p in participants.iter().filter(|p| p.wearing_eyetracker) {
            if let Some(f) = self.fold_of(&p.participant_id) {
                counts[f] += 1;
            }
        }
        counts
    }
}

/// Seeded split: eye-tracker wearers are shuffled and dealt round-robin,
/// then the others continue the deal, so both the wearer counts and the
/// fold sizes differ by at most one.
pub fn make_fold_split(participants: &[ParticipantEntry], k: usize, seed_value: u64) -> Result<FoldSplit, StoreError> {
    let mut sorted = participants.to_vec();
    sorted.sort();
    sorted.dedup_by(|a, b| a.participant_id == b.participant_id);
    if k == 0 || k > sorted.len() {
        return Err(StoreError::InsufficientParticipants { k, n: sorted.len() });
    }
    let mut rng = seed::rng(seed::derive(seed_value, "folds", k as u64));
    let (mut wearers, mut others): (Vec<_>, Vec<_>) = sorted.into_iter().partition(|p| p.wearing_eyetracker);
    wearers.shuffle(&mut rng);
    others.shuffle(&mut rng);
    let assignment = wearers
        .into_iter()
        .chain(others)
        .enumerate()
        .map(|(i, p)| (p.participant_id, i % k))
        .collect();
    Ok(FoldSplit { k, seed: seed_value, assignment })
}

/// Per fold, a seeded draw of up to `per_fold` sample ids from that fold's
/// participants, sorted.
pub fn fine_tune_draws(split: &FoldSplit, samples: &[GazeSample], per_fold: usize) -> Vec<Vec<SampleId>> {
    (0..split.k)
        .map(|fold| {
            let mut pool: Vec<SampleId> = samples
                .iter()
                .filter(|s| split.fold_of(&s.participant_id) == Some(fold))
                .map(|s| s.sample_id.clone())
                .collect();
            pool.sort();
            let mut rng = seed::rng(seed::derive(split.seed, "draw", fold as u64));
            pool.shuffle(&mut rng);
            pool.truncate(per_fold);
            pool.sort();
            pool
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn population(wearers: usize, others: usize) -> Vec<ParticipantEntry> {
        (0..wearers + others)
            .map(|i| ParticipantEntry { participant_id: ParticipantId::new(format!("p{i:03}")), wearing_eyetracker: i < wearers })
            .collect()
    }

    #[test]
    fn balanced_three_folds() {
        let people = population(22, 25);
        let split = make_fold_split(&people, 3, 5).unwrap();
        let mut counts = split.eyetracker_counts(&people);
        counts.sort();
        assert_eq!(counts, [7, 7, 8]);
        assert_eq!(split.assignment.len(), 47);
        assert_eq!(split, make_fold_split(&people, 3, 5).unwrap());
    }

    #[test]
    fn single_fold_and_too_many_folds() {
        let people = population(2, 3);
        let split = make_fold_split(&people, 1, 0).unwrap();
        assert!(split.assignment.values().all(|&f| f == 0));
        assert!(matches!(make_fold_split(&people, 6, 0), Err(StoreError::InsufficientParticipants { k: 6, n: 5 })));
        assert!(make_fold_split(&people, 0, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn fold_balance(wearers in 0usize..40, others in 0usize..40, k in 1usize..6, s in any::<u64>()) {
            prop_assume!(wearers + others >= k);
            let people = population(wearers, others);
            let split = make_fold_split(&people, k, s).unwrap();
            prop_assert_eq!(split.assignment.len(), people.len());
            let counts = split.eyetracker_counts(&people);
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            let sizes: Vec<usize> = (0..k).map(|f| split.members(f).len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
