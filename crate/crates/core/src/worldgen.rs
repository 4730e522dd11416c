//! Synthetic classification worlds and the class-conditional generator that
//! stands in for prompt-driven image synthesis.
//!
//! A world is an equal-prior mixture of isotropic Gaussians whose means sit
//! on a sphere. The generator draws from a distorted copy of that mixture:
//! each class mean is shifted by a fixed drift vector, the covariance is
//! inflated, and a fraction of draws come from the wrong component while
//! keeping the intended pseudo-label.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, LabError, Result};
use crate::nnet::gaussian_vec;
use crate::numerics::{softmax_unchecked, ProbVector};
use crate::rng::{derive_indexed, rng_from, Rng64};

/// Reproducible description of a world: seeds and hyperparameters only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub radius: f64,
    /// Isotropic per-class variance σ².
    pub cov_scale: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self { num_classes: 8, input_dim: 16, radius: 3.0, cov_scale: 0.5, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldSpec", into = "WorldSpec")]
pub struct TaskWorld {
    spec: WorldSpec,
    class_means: Vec<Vec<f64>>,
}

impl TryFrom<WorldSpec> for TaskWorld {
    type Error = LabError;
    fn try_from(spec: WorldSpec) -> Result<Self> {
        TaskWorld::new(spec)
    }
}

impl From<TaskWorld> for WorldSpec {
    fn from(w: TaskWorld) -> Self {
        w.spec
    }
}

const MAX_MEAN_ATTEMPTS: u64 = 1000;

impl TaskWorld {
    /// Draws class means uniformly on the sphere, applies one repulsion pass
    /// and redraws until every pair is at least `R/2` apart.
    pub fn new(spec: WorldSpec) -> Result<Self> {
        ensure!(spec.num_classes >= 2, "a world needs at least two classes");
        ensure!(spec.input_dim >= 2, "a world needs input_dim >= 2");
        ensure!(spec.radius > 0.0 && spec.radius.is_finite(), "radius must be positive");
        ensure!(
            spec.cov_scale > 0.0 && spec.cov_scale.is_finite(),
            "cov_scale must be positive"
        );
        let min_sep = spec.radius / 2.0;
        for attempt in 0..MAX_MEAN_ATTEMPTS {
            let mut rng = rng_from(derive_indexed(spec.seed, "class-means", attempt));
            let mut means: Vec<Vec<f64>> = (0..spec.num_classes)
                .map(|_| project_to_sphere(gaussian_vec(&mut rng, spec.input_dim, 1.0), spec.radius))
                .collect();
            repel(&mut means, min_sep, spec.radius);
            if min_pairwise_distance(&means) >= min_sep {
                return Ok(Self { spec, class_means: means });
            }
        }
        Err(LabError::Contract(format!(
            "could not place {} class means at separation {min_sep} in {} dimensions",
            spec.num_classes, spec.input_dim
        )))
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn radius(&self) -> f64 {
        self.spec.radius
    }

    pub fn cov_scale(&self) -> f64 {
        self.spec.cov_scale
    }

    pub fn class_means(&self) -> &[Vec<f64>] {
        &self.class_means
    }

    fn log_component_densities(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim() as f64;
        let var = self.cov_scale();
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI * var).ln();
        self.class_means
            .iter()
            .map(|m| {
                let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                norm - sq / (2.0 * var)
            })
            .collect()
    }

    /// `log p(x)` under the equal-prior mixture.
    pub fn mixture_log_density(&self, x: &[f64]) -> Result<f64> {
        ensure!(x.len() == self.input_dim(), "input length mismatch");
        let logs = self.log_component_densities(x);
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k = self.num_classes() as f64;
        Ok(m + (logs.iter().map(|l| (l - m).exp()).sum::<f64>() / k).ln())
    }
}

fn project_to_sphere(mut v: Vec<f64>, radius: f64) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
    v.iter_mut().for_each(|a| *a *= radius / n);
    v
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn min_pairwise_distance(means: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..means.len() {
        for j in 0..i {
            best = best.min(distance(&means[i], &means[j]));
        }
    }
    best
}

/// One Lloyd-style pass: every pair closer than `min_sep` is pushed apart
/// along its difference, then all means are re-projected onto the sphere.
fn repel(means: &mut [Vec<f64>], min_sep: f64, radius: f64) {
    let k = means.len();
    let mut shifts = vec![vec![0.0; means[0].len()]; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let dist = distance(&means[i], &means[j]);
            if dist < min_sep && dist > 0.0 {
                let push = 0.5 * (min_sep - dist) / dist;
                for (s, (a, b)) in shifts[i].iter_mut().zip(means[i].iter().zip(&means[j])) {
                    *s += push * (a - b);
                }
            }
        }
    }
    for (m, s) in means.iter_mut().zip(shifts) {
        let moved: Vec<f64> = m.iter().zip(&s).map(|(a, b)| a + b).collect();
        *m = project_to_sphere(moved, radius);
    }
}

/// Inputs with ground-truth class labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Draws `n_per_class` points from each class component, class-major order.
pub fn sample_labeled(world: &TaskWorld, n_per_class: usize, rng: &mut Rng64) -> Result<LabeledSet> {
    ensure!(n_per_class >= 1, "n_per_class must be at least 1");
    let std = world.cov_scale().sqrt();
    let mut out = LabeledSet::default();
    for (c, mean) in world.class_means().iter().enumerate() {
        for _ in 0..n_per_class {
            let noise = gaussian_vec(rng, world.input_dim(), std);
            out.inputs.push(mean.iter().zip(noise).map(|(m, e)| m + e).collect());
            out.labels.push(c);
        }
    }
    Ok(out)
}

/// Fidelity knobs of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Length δ of the per-class systematic mean shift.
    pub mean_drift: f64,
    /// Multiplier κ ≥ 1 on the class variance.
    pub cov_inflation: f64,
    /// Probability ρ that a draw comes from a different class's component.
    pub label_noise: f64,
    /// Selects the drift directions.
    pub variation_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { mean_drift: 0.5, cov_inflation: 2.0, label_noise: 0.1, variation_seed: 7 }
    }
}

impl GeneratorConfig {
    /// A generator that reproduces the world exactly.
    pub fn perfect(variation_seed: u64) -> Self {
        Self { mean_drift: 0.0, cov_inflation: 1.0, label_noise: 0.0, variation_seed }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.mean_drift >= 0.0 && self.mean_drift.is_finite(),
            "mean_drift must be finite and >= 0"
        );
        ensure!(
            self.cov_inflation >= 1.0 && self.cov_inflation.is_finite(),
            "cov_inflation must be >= 1"
        );
        ensure!((0.0..=1.0).contains(&self.label_noise), "label_noise must lie in [0, 1]");
        Ok(())
    }

    /// Fixed drift vector for `class`: a seeded random unit direction scaled by δ.
    pub fn drift(&self, class: usize, input_dim: usize) -> Vec<f64> {
        let mut rng = rng_from(derive_indexed(self.variation_seed, "drift", class as u64));
        let dir = project_to_sphere(gaussian_vec(&mut rng, input_dim, 1.0), 1.0);
        dir.into_iter().map(|v| v * self.mean_drift).collect()
    }

    fn tag(&self) -> String {
        format!(
            "synth(delta={},kappa={},rho={},seed={})",
            self.mean_drift, self.cov_inflation, self.label_noise, self.variation_seed
        )
    }
}

/// Generator output: samples with the class each was synthesized for.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledSet {
    pub samples: Vec<Vec<f64>>,
    pub pseudo_labels: Vec<usize>,
    /// Mixture component each sample was actually drawn from.
    pub components: Vec<usize>,
    pub provenance: String,
}

impl PseudoLabeledSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Synthesizes `counts[i]` samples for each intended class `i`, class-major.
pub fn synth_candidates(
    world: &TaskWorld,
    gen: &GeneratorConfig,
    counts: &[usize],
    rng: &mut Rng64,
) -> Result<PseudoLabeledSet> {
    gen.validate()?;
    let k = world.num_classes();
    ensure!(counts.len() == k, "counts has {} entries for {k} classes", counts.len());
    let d = world.input_dim();
    let drifts: Vec<Vec<f64>> = (0..k).map(|c| gen.drift(c, d)).collect();
    let std = (gen.cov_inflation * world.cov_scale()).sqrt();
    let mut out = PseudoLabeledSet { provenance: gen.tag(), ..Default::default() };
    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let flip: f64 = rng.random();
            let other: usize = rng.random_range(0..k - 1);
            let component = if flip < gen.label_noise {
                if other >= class {
                    other + 1
                } else {
                    other
                }
            } else {
                class
            };
            let noise = gaussian_vec(rng, d, std);
            let x = world.class_means()[component]
                .iter()
                .zip(&drifts[component])
                .zip(noise)
                .map(|((m, dr), e)| m + dr + e)
                .collect();
            out.samples.push(x);
            out.pseudo_labels.push(class);
            out.components.push(component);
        }
    }
    Ok(out)
}

/// Splits `total` across `num_classes` as evenly as possible; the remainder
/// goes to distinct classes chosen uniformly at random.
pub fn balanced_counts(num_classes: usize, total: usize, rng: &mut Rng64) -> Vec<usize> {
    let mut counts = vec![total / num_classes; num_classes];
    let extra = total % num_classes;
    if extra > 0 {
        for i in sample_indices(rng, num_classes, extra) {
            counts[i] += 1;
        }
    }
    counts
}

/// `n` points uniform on the cube `[−2R, 2R]^d`, independent of the classes.
pub fn sample_ood(world: &TaskWorld, n: usize, rng: &mut Rng64) -> Result<Vec<Vec<f64>>> {
    ensure!(n >= 1, "sample_ood needs n >= 1");
    let bound = 2.0 * world.radius();
    Ok((0..n)
        .map(|_| (0..world.input_dim()).map(|_| rng.random_range(-bound..=bound)).collect())
        .collect())
}

/// Exact equal-prior posterior and its argmax.
pub fn bayes_label(world: &TaskWorld, x: &[f64]) -> Result<(usize, ProbVector)> {
    ensure!(x.len() == world.input_dim(), "input length mismatch");
    let post = ProbVector::from_raw(softmax_unchecked(&world.log_component_densities(x)));
    Ok((post.argmax(), post))
}

/// Standard normal sampler shared by callers that need raw draws.
pub fn standard_normal(rng: &mut Rng64) -> f64 {
    Normal::new(0.0, 1.0).expect("valid std").sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dataset_frechet;
    use crate::rng::rng_from;

    fn default_world() -> TaskWorld {
        TaskWorld::new(WorldSpec::default()).unwrap()
    }

    #[test]
    fn means_are_separated_on_the_sphere() {
        for seed in 0..20 {
            let w = TaskWorld::new(WorldSpec { seed, ..WorldSpec::default() }).unwrap();
            assert!(min_pairwise_distance(w.class_means()) >= 1.5);
            for m in w.class_means() {
                let n = m.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 3.0).abs() < 1e-12);
            }
        }
        let crowded = WorldSpec { num_classes: 5, input_dim: 2, ..WorldSpec::default() };
        assert!(TaskWorld::new(crowded).is_ok());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(TaskWorld::new(WorldSpec { num_classes: 1, ..WorldSpec::default() }).is_err());
        assert!(TaskWorld::new(WorldSpec { input_dim: 1, ..WorldSpec::default() }).is_err());
        assert!(TaskWorld::new(WorldSpec { cov_scale: 0.0, ..WorldSpec::default() }).is_err());
    }

    #[test]
    fn world_serializes_as_spec_only() {
        let w = default_world();
        let text = serde_json::to_string(&w).unwrap();
        assert!(!text.contains("class_means"));
        let back: TaskWorld = serde_json::from_str(&text).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn sample_labeled_counts_and_zero_variance_limit() {
        let w = TaskWorld::new(WorldSpec { num_classes: 3, ..WorldSpec::default() }).unwrap();
        let s = sample_labeled(&w, 1, &mut rng_from(1)).unwrap();
        assert_eq!(s.labels, vec![0, 1, 2]);
        let tight = TaskWorld::new(WorldSpec { cov_scale: 1e-12, ..WorldSpec::default() }).unwrap();
        let s = sample_labeled(&tight, 5, &mut rng_from(1)).unwrap();
        for (x, c) in s.inputs.iter().zip(&s.labels) {
            assert!(distance(x, &tight.class_means()[*c]) < 1e-4);
        }
        assert!(sample_labeled(&w, 0, &mut rng_from(1)).is_err());
    }

    #[test]
    fn empirical_class_means_within_three_standard_errors() {
        let w = default_world();
        let n = 200;
        let s = sample_labeled(&w, n, &mut rng_from(42)).unwrap();
        let se = (w.cov_scale() / n as f64).sqrt();
        for c in 0..w.num_classes() {
            let pts: Vec<&Vec<f64>> =
                s.inputs.iter().zip(&s.labels).filter(|(_, l)| **l == c).map(|(x, _)| x).collect();
            // Root-mean-square deviation per coordinate of the class mean.
            let msd = (0..w.input_dim())
                .map(|j| {
                    let m = pts.iter().map(|x| x[j]).sum::<f64>() / n as f64;
                    (m - w.class_means()[c][j]).powi(2)
                })
                .sum::<f64>()
                / w.input_dim() as f64;
            assert!(msd.sqrt() <= 3.0 * se, "class {c}: {} > {}", msd.sqrt(), 3.0 * se);
        }
    }

    #[test]
    fn sampling_is_bitwise_deterministic() {
        let w = default_world();
        let a = sample_labeled(&w, 10, &mut rng_from(3)).unwrap();
        let b = sample_labeled(&w, 10, &mut rng_from(3)).unwrap();
        assert_eq!(a, b);
        let g = GeneratorConfig::default();
        let a = synth_candidates(&w, &g, &[3; 8], &mut rng_from(4)).unwrap();
        let b = synth_candidates(&w, &g, &[3; 8], &mut rng_from(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_counts_and_label_noise_boundary() {
        let w = default_world();
        let s = synth_candidates(&w, &GeneratorConfig::default(), &[10; 8], &mut rng_from(1)).unwrap();
        assert_eq!(s.len(), 80);
        for c in 0..8 {
            assert_eq!(s.pseudo_labels.iter().filter(|l| **l == c).count(), 10);
        }
        let two = TaskWorld::new(WorldSpec { num_classes: 2, ..WorldSpec::default() }).unwrap();
        let g = GeneratorConfig { label_noise: 1.0, ..GeneratorConfig::default() };
        let s = synth_candidates(&two, &g, &[50, 50], &mut rng_from(2)).unwrap();
        assert!(s.pseudo_labels.iter().zip(&s.components).all(|(l, c)| l != c));
        let g = GeneratorConfig { cov_inflation: 0.5, ..GeneratorConfig::default() };
        assert!(synth_candidates(&w, &g, &[1; 8], &mut rng_from(2)).is_err());
    }

    #[test]
    fn perfect_generator_matches_the_world() {
        let w = default_world();
        let synth = synth_candidates(&w, &GeneratorConfig::perfect(1), &[1250; 8], &mut rng_from(5))
            .unwrap();
        let real = sample_labeled(&w, 1250, &mut rng_from(6)).unwrap();
        let fd = dataset_frechet(&synth.samples, &real.inputs).unwrap();
        assert!(fd < 0.05, "{fd}");
    }

    #[test]
    fn balanced_counts_sum_and_spread() {
        let mut rng = rng_from(1);
        let c = balanced_counts(8, 603, &mut rng);
        assert_eq!(c.iter().sum::<usize>(), 603);
        assert!(c.iter().all(|v| *v == 75 || *v == 76));
    }

    #[test]
    fn ood_samples_stay_in_cube_and_centered() {
        let w = default_world();
        let s = sample_ood(&w, 5, &mut rng_from(1)).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().flatten().all(|v| v.abs() <= 6.0));
        let s = sample_ood(&w, 10_000, &mut rng_from(2)).unwrap();
        for j in 0..w.input_dim() {
            let m = s.iter().map(|x| x[j]).sum::<f64>() / s.len() as f64;
            assert!(m.abs() < 0.1, "coordinate {j} mean {m}");
        }
    }

    #[test]
    fn ood_samples_have_lower_mixture_density() {
        let w = default_world();
        let ood = sample_ood(&w, 2000, &mut rng_from(3)).unwrap();
        let id = sample_labeled(&w, 250, &mut rng_from(4)).unwrap();
        let mean = |xs: &[Vec<f64>]| {
            xs.iter().map(|x| w.mixture_log_density(x).unwrap()).sum::<f64>() / xs.len() as f64
        };
        assert!(mean(&ood) < mean(&id.inputs));
    }

    #[test]
    fn bayes_label_examples() {
        let w = default_world();
        let (c, post) = bayes_label(&w, &w.class_means()[2]).unwrap();
        assert_eq!(c, 2);
        assert!(post.entries()[2] > 0.99);

        let mid: Vec<f64> = w.class_means()[0]
            .iter()
            .zip(&w.class_means()[1])
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let (_, post) = bayes_label(&w, &mid).unwrap();
        assert!((post.entries()[0] - post.entries()[1]).abs() < 1e-12);
    }

    #[test]
    fn bayes_posterior_matches_direct_density_sum() {
        let w = default_world();
        let mut rng = rng_from(9);
        let x: Vec<f64> = (0..16).map(|_| 1.5 * standard_normal(&mut rng)).collect();
        let (_, post) = bayes_label(&w, &x).unwrap();
        // Brute force: explicit Gaussian pdfs, summed.
        let var = w.cov_scale();
        let dens: Vec<f64> = w
            .class_means()
            .iter()
            .map(|m| {
                let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum();
                (2.0 * std::f64::consts::PI * var).powf(-8.0) * (-sq / (2.0 * var)).exp()
            })
            .collect();
        let total: f64 = dens.iter().sum();
        for (p, d) in post.entries().iter().zip(&dens) {
            assert!((p - d / total).abs() < 1e-9);
        }
    }
}
