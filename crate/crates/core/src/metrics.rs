//! Accuracy, attack success rate, victim/substitute divergence profiles and
//! the dataset-level Fréchet distance.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nnet::AdaptedClassifier;
use crate::numerics::{cross_entropy, frechet_distance, mean_cov, softmax};
use crate::worldgen::{bayes_label, LabeledSet, TaskWorld};

/// Anything that maps an input to a class index.
pub trait Classifier {
    fn classify(&self, x: &[f64]) -> Result<usize>;
}

impl Classifier for AdaptedClassifier {
    fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(self.predict(x)?.0)
    }
}

/// The exact Bayes classifier of a world.
pub struct BayesClassifier<'a>(pub &'a TaskWorld);

impl Classifier for BayesClassifier<'_> {
    fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(bayes_label(self.0, x)?.0)
    }
}

impl<F: Fn(&[f64]) -> usize> Classifier for F {
    fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(self(x))
    }
}

/// Percentage of correctly classified samples.
pub fn accuracy(model: &impl Classifier, test: &LabeledSet) -> Result<f64> {
    ensure!(!test.is_empty(), "accuracy on an empty test set");
    let mut correct = 0usize;
    for (x, y) in test.inputs.iter().zip(&test.labels) {
        if model.classify(x)? == *y {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / test.len() as f64)
}

/// `100 · substitute_acc / victim_acc`; may exceed 100.
pub fn asr(substitute_acc: f64, victim_acc: f64) -> Result<f64> {
    ensure!(victim_acc > 0.0, "ASR undefined for victim accuracy {victim_acc}");
    Ok(100.0 * substitute_acc / victim_acc)
}

/// Median of finite values (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-sample `CE(victim softmax → substitute logits)` split by cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceProfile {
    pub id_values: Vec<f64>,
    pub ood_values: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl DivergenceProfile {
    pub fn id_mean(&self) -> f64 {
        mean(&self.id_values)
    }

    pub fn ood_mean(&self) -> f64 {
        mean(&self.ood_values)
    }

    /// `cohort,value` rows preceded by a comment line with cohort sizes and means.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# id_n={} ood_n={} id_mean={} ood_mean={}",
            self.id_values.len(),
            self.ood_values.len(),
            self.id_mean(),
            self.ood_mean()
        );
        out.push_str("cohort,value\n");
        for v in &self.id_values {
            let _ = writeln!(out, "id,{v}");
        }
        for v in &self.ood_values {
            let _ = writeln!(out, "ood,{v}");
        }
        out
    }
}

/// Cross-entropy of the substitute's logits against the victim's predicted
/// distribution, for every ID and OOD input.
pub fn divergence_profile(
    victim: &AdaptedClassifier,
    substitute: &AdaptedClassifier,
    id_set: &[Vec<f64>],
    ood_set: &[Vec<f64>],
) -> Result<DivergenceProfile> {
    ensure!(!id_set.is_empty() && !ood_set.is_empty(), "both cohorts must be non-empty");
    let values = |set: &[Vec<f64>]| -> Result<Vec<f64>> {
        set.iter()
            .map(|x| {
                let target = softmax(&victim.forward(x)?)?;
                cross_entropy(&substitute.forward(x)?, &target)
            })
            .collect()
    };
    Ok(DivergenceProfile { id_values: values(id_set)?, ood_values: values(ood_set)? })
}

/// Fréchet distance between Gaussians fitted to two sample sets.
pub fn dataset_frechet(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    ensure!(!a.is_empty() && !b.is_empty(), "dataset_frechet needs non-empty sets");
    let d = a[0].len();
    ensure!(
        a.len() > d + 1 && b.len() > d + 1,
        "dataset_frechet needs more than d+1 = {} samples per set, got {} and {}",
        d + 1,
        a.len(),
        b.len()
    );
    let (m1, c1) = mean_cov(a)?;
    let (m2, c2) = mean_cov(b)?;
    frechet_distance(&m1, &c1, &m2, &c2)
}
