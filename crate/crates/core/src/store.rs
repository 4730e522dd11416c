//! Training sample store with evolving soft labels.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{ProbVector, SIMPLEX_TOL};

/// Where a sample's initial label came from. Fixed at insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Generator pseudo-label accepted without a victim query.
    Pseudo,
    /// Label returned by the victim oracle.
    Queried,
    /// Ground-truth label (victim training data).
    Labeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    label: ProbVector,
    provenance: Provenance,
    iteration: usize,
}

impl Sample {
    pub fn label(&self) -> &ProbVector {
        &self.label
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleStore {
    entries: Vec<Sample>,
}

impl SampleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        input: Vec<f64>,
        label: ProbVector,
        provenance: Provenance,
        iteration: usize,
    ) -> Result<()> {
        ensure!(
            label.is_on_simplex(SIMPLEX_TOL),
            "sample label is not on the probability simplex"
        );
        if let Some(first) = self.entries.first() {
            ensure!(
                first.input.len() == input.len() && first.label.len() == label.len(),
                "sample dimensions differ from the rest of the store"
            );
        }
        self.entries.push(Sample { input, label, provenance, iteration });
        Ok(())
    }

    /// Appends every entry of `other`, keeping labels and provenance.
    pub fn extend(&mut self, other: SampleStore) -> Result<()> {
        for s in other.entries {
            self.push(s.input, s.label, s.provenance, s.iteration)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.entries.iter()
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.entries[i]
    }

    pub fn labels(&self) -> impl Iterator<Item = &ProbVector> {
        self.entries.iter().map(|s| &s.label)
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.entries.iter().filter(|s| s.provenance == provenance).count()
    }

    pub(crate) fn set_label(&mut self, i: usize, label: ProbVector) {
        self.entries[i].label = label;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_off_simplex_and_mismatched_entries() {
        let mut s = SampleStore::new();
        s.push(vec![0.0, 1.0], ProbVector::one_hot(3, 1).unwrap(), Provenance::Pseudo, 0)
            .unwrap();
        assert!(s
            .push(vec![0.0], ProbVector::one_hot(3, 1).unwrap(), Provenance::Queried, 1)
            .is_err());
        assert!(s
            .push(vec![0.0, 0.0], ProbVector::from_raw(vec![0.5, 0.6, 0.0]), Provenance::Queried, 1)
            .is_err());
        assert_eq!(s.len(), 1);
        assert_eq!(s.count(Provenance::Pseudo), 1);
    }
}
