use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{AccidentEvent, AccidentType};

pub const DEFAULT_FOLDS: usize = 5;

/// Assignment of wells to cross-validation folds. Every well is tested in
/// exactly one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    /// Wells are grouped by the set of accident types they contain, each
    /// group is shuffled with `seed` and dealt round-robin, continuing the
    /// deal across groups. This spreads every accident type over the folds.
    /// The plan depends only on the set of wells, not their input order.
    pub fn new(wells: &[String], events: &[AccidentEvent], folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::Config("at least two folds are required".into()));
        }
        let mut ids: Vec<String> = wells.to_vec();
        ids.sort();
        ids.dedup();
        if ids.len() < folds {
            return Err(Error::Evaluation(format!(
                "{} wells cannot fill {folds} folds",
                ids.len()
            )));
        }
        let mut strata: BTreeMap<Vec<AccidentType>, Vec<String>> = BTreeMap::new();
        for id in ids {
            let mut kinds: Vec<AccidentType> = events
                .iter()
                .filter(|e| e.well_id == id)
                .map(|e| e.kind)
                .collect();
            kinds.sort();
            kinds.dedup();
            strata.entry(kinds).or_default().push(id);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignment = BTreeMap::new();
        let mut next = 0;
        for (_, mut group) in strata {
            group.shuffle(&mut rng);
            for id in group {
                assignment.insert(id, next % folds);
                next += 1;
            }
        }
        Ok(FoldPlan { folds, assignment })
    }

    pub fn fold_of(&self, well: &str) -> Option<usize> {
        self.assignment.get(well).copied()
    }

    pub fn test_wells(&self, fold: usize) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(w, _)| w.clone())
            .collect()
    }

    pub fn train_wells(&self, fold: usize) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(w, _)| w.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i:02}")).collect()
    }

    #[test]
    fn every_well_tested_once() {
        let plan = FoldPlan::new(&ids(5), &[], 5, 1).unwrap();
        let mut seen: Vec<String> = (0..5).flat_map(|f| plan.test_wells(f)).collect();
        seen.sort();
        assert_eq!(seen, ids(5));
        for f in 0..5 {
            assert_eq!(plan.test_wells(f).len(), 1);
            assert_eq!(plan.train_wells(f).len(), 4);
        }
    }

    #[test]
    fn too_few_wells() {
        assert!(matches!(FoldPlan::new(&ids(4), &[], 5, 1), Err(Error::Evaluation(_))));
    }

    #[test]
    fn order_independent() {
        let mut rev = ids(12);
        rev.reverse();
        assert_eq!(
            FoldPlan::new(&ids(12), &[], 5, 3).unwrap(),
            FoldPlan::new(&rev, &[], 5, 3).unwrap()
        );
    }
}
