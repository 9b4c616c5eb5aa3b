//! Exhaustive reference for the transducer loss.
//!
//! Everything here is deliberately naive: paths are enumerated one by one,
//! arc weights are recomputed from the raw activations without going through
//! [`crate::loss`], and gradients come from central differences. It exists to
//! check the dynamic program, so keep it independent of it.

use crate::error::{Error, Result};
use crate::loss::{ActivationLattice, ArcWeightLattice, BlankSet, LossConfig};
use crate::numerics::Tensor3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const MAX_FRAMES: usize = 12;
pub const MAX_LABELS: usize = 6;
pub const MAX_BLANKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Emission {
    /// Emits the label at this position of the target sequence.
    Label { position: usize },
    Blank { duration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathStep {
    pub emission: Emission,
    /// Frame read by this emission.
    pub frame: usize,
}

/// One complete alignment from `(0, 0)` to `(T, U)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path {
    pub steps: Vec<PathStep>,
}

impl Path {
    /// Number of emissions, labels and blanks alike.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Replays the path from `(0, 0)`; true when every step is a legal arc and
    /// the walk stops exactly at `(frames, labels)`.
    pub fn is_valid(&self, frames: usize, labels: usize, blank_set: &BlankSet) -> bool {
        let (mut t, mut u) = (0, 0);
        for step in &self.steps {
            if step.frame != t || t >= frames {
                return false;
            }
            match step.emission {
                Emission::Label { position } => {
                    if position != u || u >= labels {
                        return false;
                    }
                    u += 1;
                }
                Emission::Blank { duration } => {
                    if blank_set.index_of(duration).is_none() || t + duration > frames {
                        return false;
                    }
                    t += duration;
                }
            }
        }
        t == frames && u == labels
    }
}

fn check_limits(frames: usize, labels: usize, blank_set: &BlankSet) -> Result<()> {
    if frames > MAX_FRAMES {
        return Err(Error::usage(format!(
            "oracle limit exceeded: T = {frames} > {MAX_FRAMES}"
        )));
    }
    if labels > MAX_LABELS {
        return Err(Error::usage(format!(
            "oracle limit exceeded: U = {labels} > {MAX_LABELS}"
        )));
    }
    if blank_set.len() > MAX_BLANKS {
        return Err(Error::usage(format!(
            "oracle limit exceeded: |N| = {} > {MAX_BLANKS}",
            blank_set.len()
        )));
    }
    Ok(())
}

/// Every valid path, in lexicographic order of emissions
/// (label before blanks, shorter blanks before longer ones).
pub fn enumerate_paths(frames: usize, labels: usize, blank_set: &BlankSet) -> Result<Vec<Path>> {
    check_limits(frames, labels, blank_set)?;
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    extend(frames, labels, blank_set, 0, 0, &mut prefix, &mut out);
    Ok(out)
}

fn extend(
    frames: usize,
    labels: usize,
    blank_set: &BlankSet,
    t: usize,
    u: usize,
    prefix: &mut Vec<PathStep>,
    out: &mut Vec<Path>,
) {
    if t == frames {
        if u == labels {
            out.push(Path {
                steps: prefix.clone(),
            });
        }
        return;
    }
    if u < labels {
        prefix.push(PathStep {
            emission: Emission::Label { position: u },
            frame: t,
        });
        extend(frames, labels, blank_set, t, u + 1, prefix, out);
        prefix.pop();
    }
    for m in blank_set.iter() {
        if t + m > frames {
            continue;
        }
        prefix.push(PathStep {
            emission: Emission::Blank { duration: m },
            frame: t,
        });
        extend(frames, labels, blank_set, t + m, u, prefix, out);
        prefix.pop();
    }
}

/// Shortest and longest path lengths, `None` when no path exists.
pub fn path_length_range(
    frames: usize,
    labels: usize,
    blank_set: &BlankSet,
) -> Result<Option<(usize, usize)>> {
    let paths = enumerate_paths(frames, labels, blank_set)?;
    let min = paths.iter().map(Path::len).min();
    let max = paths.iter().map(Path::len).max();
    Ok(min.zip(max))
}

/// Sum of the arc weights along `path`.
///
/// The `-sigma * |path|` term of an under-normalized path weight is already
/// part of each arc weight.
pub fn path_weight(
    path: &Path,
    arcs: &ArcWeightLattice,
    labels: &[usize],
    blank_set: &BlankSet,
) -> Result<f64> {
    let shape = arcs.shape();
    if shape.blanks != blank_set.len() || labels.len() != shape.labels {
        return Err(Error::usage("lattice shape does not match labels / blank set"));
    }
    if !path.is_valid(shape.frames, shape.labels, blank_set) {
        return Err(Error::usage(format!(
            "path is not a complete alignment of T = {}, U = {}",
            shape.frames, shape.labels
        )));
    }
    let mut u = 0;
    let mut weight = 0.0;
    for step in &path.steps {
        let k = match step.emission {
            Emission::Label { position } => {
                u = position + 1;
                labels[position]
            }
            Emission::Blank { duration } => {
                shape.vocab + blank_set.index_of(duration).expect("validated above")
            }
        };
        let row = match step.emission {
            Emission::Label { position } => position,
            Emission::Blank { .. } => u,
        };
        weight += arcs.values().get(step.frame, row, k);
    }
    Ok(weight)
}

/// `log_softmax(z) - sigma` per cell, computed straight from the definition.
pub fn naive_arc_weights(activations: &ActivationLattice, sigma: f64) -> Tensor3 {
    let z = activations.values();
    let (frames, positions, width) = z.dims();
    let mut out = Tensor3::zeros(frames, positions, width);
    for t in 0..frames {
        for u in 0..positions {
            let row = z.row(t, u);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let norm = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for k in 0..width {
                out.set(t, u, k, row[k] - norm - sigma);
            }
        }
    }
    out
}

fn naive_log_sum(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Loss by explicit summation over every enumerated path.
pub fn brute_force_loss(
    activations: &ActivationLattice,
    labels: &[usize],
    config: &LossConfig,
) -> Result<f64> {
    let shape = activations.shape();
    if let Some(&bad) = labels.iter().find(|&&l| l >= shape.vocab) {
        return Err(Error::usage(format!("label id {bad} outside vocabulary")));
    }
    let arcs = ArcWeightLattice::from_log_weights(
        naive_arc_weights(activations, config.sigma),
        shape.vocab,
        &config.blank_set,
    )?;
    let paths = enumerate_paths(shape.frames, shape.labels, &config.blank_set)?;
    if paths.is_empty() {
        return Err(Error::Infeasible {
            frames: shape.frames,
            labels: shape.labels,
            durations: config.blank_set.durations().to_vec(),
        });
    }
    let weights = paths
        .iter()
        .map(|p| path_weight(p, &arcs, labels, &config.blank_set))
        .collect::<Result<Vec<_>>>()?;
    Ok(-naive_log_sum(&weights))
}

/// Standard transducer loss (duration-1 blank only, no under-normalization)
/// from the textbook recursion in probability space:
/// `alpha(t,u) = alpha(t,u-1) y(t,u-1) + alpha(t-1,u) blank(t-1,u)`.
pub fn standard_transducer_loss(activations: &ActivationLattice, labels: &[usize]) -> Result<f64> {
    let shape = activations.shape();
    if shape.blanks != 1 {
        return Err(Error::usage("standard recursion needs exactly one blank output"));
    }
    if labels.len() != shape.labels || labels.iter().any(|&l| l >= shape.vocab) {
        return Err(Error::usage("labels do not match the lattice"));
    }
    let z = activations.values();
    let prob = |t: usize, u: usize, k: usize| {
        let row = z.row(t, u);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        (row[k] - max).exp() / denom
    };
    let blank = shape.vocab;
    let (frames, n) = (shape.frames, shape.labels);
    let mut alpha = vec![vec![0.0f64; n + 1]; frames + 1];
    alpha[0][0] = 1.0;
    for t in 0..=frames {
        for u in 0..=n {
            if t == 0 && u == 0 {
                continue;
            }
            let mut a = 0.0;
            if u > 0 && t < frames {
                a += alpha[t][u - 1] * prob(t, u - 1, labels[u - 1]);
            }
            if t > 0 {
                a += alpha[t - 1][u] * prob(t - 1, u, blank);
            }
            alpha[t][u] = a;
        }
    }
    Ok(-alpha[frames][n].ln())
}

/// Central-difference gradient of [`brute_force_loss`] with respect to every activation.
pub fn finite_diff_grad(
    activations: &ActivationLattice,
    labels: &[usize],
    config: &LossConfig,
    h: f64,
) -> Result<Tensor3> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::usage(format!("step h must be positive, got {h}")));
    }
    let shape = activations.shape();
    let base = activations.values().clone();
    let mut grad = Tensor3::zeros(shape.frames, shape.labels + 1, shape.width());
    let vocab = shape.vocab;
    let eval = |values: Tensor3| -> Result<f64> {
        let lattice = ActivationLattice::new(values, vocab, &config.blank_set)?;
        brute_force_loss(&lattice, labels, config)
    };
    for i in 0..base.as_slice().len() {
        let mut plus = base.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = base.clone();
        minus.as_mut_slice()[i] -= h;
        grad.as_mut_slice()[i] = (eval(plus)? - eval(minus)?) / (2.0 * h);
    }
    Ok(grad)
}

/// Bounds for [`random_instance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceLimits {
    pub max_frames: usize,
    pub max_labels: usize,
    pub max_vocab: usize,
    /// Durations other than 1 that may join the blank set.
    pub extra_durations: Vec<usize>,
    pub sigmas: Vec<f64>,
    /// Standard deviation of the Gaussian activations.
    pub scale: f64,
}

impl Default for InstanceLimits {
    fn default() -> Self {
        Self {
            max_frames: 6,
            max_labels: 4,
            max_vocab: 5,
            extra_durations: vec![2, 3, 4],
            sigmas: vec![0.0, 0.05, 0.2],
            scale: 2.0,
        }
    }
}

impl InstanceLimits {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_FRAMES).contains(&self.max_frames) {
            return Err(Error::usage(format!(
                "max_frames must be in 1..={MAX_FRAMES}, got {}",
                self.max_frames
            )));
        }
        if self.max_labels > MAX_LABELS {
            return Err(Error::usage(format!(
                "max_labels must be at most {MAX_LABELS}, got {}",
                self.max_labels
            )));
        }
        if self.max_vocab == 0 {
            return Err(Error::usage("max_vocab must be at least 1"));
        }
        if self.extra_durations.len() + 1 > MAX_BLANKS {
            return Err(Error::usage(format!(
                "at most {MAX_BLANKS} blank durations are supported"
            )));
        }
        if self.extra_durations.iter().any(|&m| m < 2) {
            return Err(Error::usage("extra durations must be at least 2"));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::usage("sigmas must be a non-empty list of finite values >= 0"));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(Error::usage("scale must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One randomly drawn loss problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub activations: ActivationLattice,
    pub labels: Vec<usize>,
    pub config: LossConfig,
}

/// Draws sizes, blank set, sigma, labels and Gaussian activations within `limits`.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, limits: &InstanceLimits) -> Result<Instance> {
    limits.validate()?;
    let frames = rng.random_range(1..=limits.max_frames);
    let n_labels = rng.random_range(0..=limits.max_labels);
    let vocab = rng.random_range(1..=limits.max_vocab);
    let mut durations = vec![1];
    durations.extend(limits.extra_durations.iter().filter(|_| rng.random_bool(0.5)));
    let blank_set = BlankSet::new(durations)?;
    let sigma = limits.sigmas[rng.random_range(0..limits.sigmas.len())];
    let labels: Vec<usize> = (0..n_labels).map(|_| rng.random_range(0..vocab)).collect();
    let width = vocab + blank_set.len();
    let values = Tensor3::from_fn((frames, n_labels + 1, width), |_, _, _| {
        let x: f64 = rng.sample(StandardNormal);
        x * limits.scale
    });
    Ok(Instance {
        activations: ActivationLattice::new(values, vocab, &blank_set)?,
        labels,
        config: LossConfig::new(sigma, blank_set)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn blanks(d: &[usize]) -> BlankSet {
        BlankSet::new(d.to_vec()).unwrap()
    }

    fn blank(duration: usize, frame: usize) -> PathStep {
        PathStep {
            emission: Emission::Blank { duration },
            frame,
        }
    }

    fn label(position: usize, frame: usize) -> PathStep {
        PathStep {
            emission: Emission::Label { position },
            frame,
        }
    }

    fn compositions(total: usize, parts: &[usize]) -> usize {
        let mut c = vec![0usize; total + 1];
        c[0] = 1;
        for n in 1..=total {
            c[n] = parts.iter().filter(|&&m| m <= n).map(|&m| c[n - m]).sum();
        }
        c[total]
    }

    #[test]
    fn enumeration_examples() {
        let paths = enumerate_paths(1, 0, &BlankSet::standard()).unwrap();
        assert_eq!(paths, vec![Path { steps: vec![blank(1, 0)] }]);

        let paths = enumerate_paths(2, 1, &blanks(&[1, 2])).unwrap();
        assert_eq!(
            paths,
            vec![
                Path { steps: vec![label(0, 0), blank(1, 0), blank(1, 1)] },
                Path { steps: vec![label(0, 0), blank(2, 0)] },
                Path { steps: vec![blank(1, 0), label(0, 1), blank(1, 1)] },
            ]
        );

        let paths = enumerate_paths(3, 0, &blanks(&[1, 2, 3])).unwrap();
        let shapes: Vec<Vec<usize>> = paths
            .iter()
            .map(|p| {
                p.steps
                    .iter()
                    .map(|s| match s.emission {
                        Emission::Blank { duration } => duration,
                        Emission::Label { .. } => unreachable!(),
                    })
                    .collect()
            })
            .collect();
        assert_eq!(shapes, vec![vec![1, 1, 1], vec![1, 2], vec![2, 1], vec![3]]);
    }

    #[test]
    fn blank_only_counts_match_composition_recurrence() {
        for set in [vec![1], vec![1, 2], vec![1, 3], vec![1, 2, 4], vec![1, 2, 3, 4]] {
            let n = blanks(&set);
            for t in 1..=MAX_FRAMES {
                assert_eq!(
                    enumerate_paths(t, 0, &n).unwrap().len(),
                    compositions(t, &set),
                    "T = {t}, N = {set:?}"
                );
            }
        }
    }

    #[test]
    fn enumerated_paths_are_valid_sorted_and_unique() {
        let n = blanks(&[1, 2, 4]);
        let paths = enumerate_paths(6, 3, &n).unwrap();
        assert!(paths.windows(2).all(|w| w[0].steps.iter().map(|s| s.emission).lt(w[1].steps.iter().map(|s| s.emission))));
        for p in &paths {
            assert!(p.is_valid(6, 3, &n));
            let blank_frames: usize = p
                .steps
                .iter()
                .filter_map(|s| match s.emission {
                    Emission::Blank { duration } => Some(duration),
                    _ => None,
                })
                .sum();
            assert_eq!(blank_frames, 6);
            assert_eq!(p.len() - 3, p.steps.iter().filter(|s| matches!(s.emission, Emission::Blank { .. })).count());
        }
    }

    #[test]
    fn limits_are_enforced() {
        assert!(matches!(enumerate_paths(13, 0, &BlankSet::standard()), Err(Error::Usage(_))));
        assert!(enumerate_paths(3, 7, &BlankSet::standard()).is_err());
        assert!(enumerate_paths(3, 1, &blanks(&[1, 2, 3, 4, 5])).is_err());
    }

    #[test]
    fn invalid_paths_are_detected() {
        let n = blanks(&[1, 2]);
        assert!(!Path { steps: vec![blank(2, 0), label(0, 2)] }.is_valid(2, 1, &n));
        assert!(!Path { steps: vec![blank(1, 0)] }.is_valid(2, 0, &n));
        assert!(!Path { steps: vec![blank(3, 0)] }.is_valid(3, 0, &n));
        assert!(!Path { steps: vec![blank(1, 1), blank(1, 1)] }.is_valid(2, 0, &n));
    }

    #[test]
    fn path_weight_examples() {
        let n1 = BlankSet::standard();
        let z = ActivationLattice::new(Tensor3::zeros(1, 1, 2), 1, &n1).unwrap();
        let arcs = ArcWeightLattice::from_log_weights(naive_arc_weights(&z, 0.0), 1, &n1).unwrap();
        let single = Path { steps: vec![blank(1, 0)] };
        assert_abs_diff_eq!(path_weight(&single, &arcs, &[], &n1).unwrap(), -(2f64.ln()), epsilon = 1e-15);

        let n = blanks(&[1, 2]);
        let z = ActivationLattice::new(Tensor3::zeros(2, 2, 3), 1, &n).unwrap();
        let plain = ArcWeightLattice::from_log_weights(naive_arc_weights(&z, 0.0), 1, &n).unwrap();
        let shifted = ArcWeightLattice::from_log_weights(naive_arc_weights(&z, 0.05), 1, &n).unwrap();
        for p in enumerate_paths(2, 1, &n).unwrap() {
            let w0 = path_weight(&p, &plain, &[0], &n).unwrap();
            let w1 = path_weight(&p, &shifted, &[0], &n).unwrap();
            assert_abs_diff_eq!(w0, -(p.len() as f64) * 3f64.ln(), epsilon = 1e-12);
            assert_abs_diff_eq!(w1, w0 - 0.05 * p.len() as f64, epsilon = 1e-12);
        }
        let three = Path { steps: vec![label(0, 0), blank(1, 0), blank(1, 1)] };
        assert_abs_diff_eq!(path_weight(&three, &plain, &[0], &n).unwrap(), -3.295837, epsilon = 1e-6);

        let bogus = Path { steps: vec![blank(2, 0)] };
        assert!(path_weight(&bogus, &plain, &[0], &n).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let n1 = BlankSet::standard();
        let z = ActivationLattice::new(Tensor3::zeros(1, 1, 2), 1, &n1).unwrap();
        let cfg = LossConfig::new(0.0, n1).unwrap();
        assert_abs_diff_eq!(brute_force_loss(&z, &[], &cfg).unwrap(), 2f64.ln(), epsilon = 1e-15);

        let n = blanks(&[1, 2]);
        let z = ActivationLattice::new(Tensor3::zeros(2, 2, 3), 1, &n).unwrap();
        let cfg = LossConfig::new(0.0, n.clone()).unwrap();
        assert_abs_diff_eq!(brute_force_loss(&z, &[0], &cfg).unwrap(), 1.686399, epsilon = 1e-6);
        let cfg = LossConfig::new(0.05, n).unwrap();
        assert_abs_diff_eq!(brute_force_loss(&z, &[0], &cfg).unwrap(), 1.806100, epsilon = 1e-6);
    }

    #[test]
    fn dead_duration_adds_no_paths() {
        let with = enumerate_paths(3, 2, &blanks(&[1, 2, 4])).unwrap();
        let without = enumerate_paths(3, 2, &blanks(&[1, 2])).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn standard_recursion_uniform() {
        // N = {1}, T = 2, U = 1: L B B and B L B, 3 arcs at 1/2 each.
        let z = ActivationLattice::new(Tensor3::zeros(2, 2, 2), 1, &BlankSet::standard()).unwrap();
        let loss = standard_transducer_loss(&z, &[0]).unwrap();
        assert_abs_diff_eq!(loss, 4f64.ln(), epsilon = 1e-12);
        let n = blanks(&[1, 2]);
        let z = ActivationLattice::new(Tensor3::zeros(2, 2, 3), 1, &n).unwrap();
        assert!(standard_transducer_loss(&z, &[0]).is_err());
    }

    #[test]
    fn finite_difference_single_arc() {
        let n1 = BlankSet::standard();
        let z = ActivationLattice::new(Tensor3::zeros(1, 1, 2), 1, &n1).unwrap();
        let cfg = LossConfig::new(0.0, n1).unwrap();
        let g = finite_diff_grad(&z, &[], &cfg, 1e-5).unwrap();
        assert_abs_diff_eq!(g.get(0, 0, 0), 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(g.get(0, 0, 1), -0.5, epsilon = 1e-8);
        assert!(finite_diff_grad(&z, &[], &cfg, 0.0).is_err());
    }

    #[test]
    fn random_instances_respect_limits() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let limits = InstanceLimits::default();
        for _ in 0..200 {
            let inst = random_instance(&mut rng, &limits).unwrap();
            let shape = inst.activations.shape();
            assert!((1..=6).contains(&shape.frames));
            assert!(shape.labels <= 4 && inst.labels.len() == shape.labels);
            assert!(inst.labels.iter().all(|&k| k < shape.vocab));
            assert!(inst.config.blank_set.iter().all(|m| m <= 4));
            assert!(limits.sigmas.contains(&inst.config.sigma));
        }
    }

    #[test]
    fn instance_limits_enforce_oracle_caps() {
        let too_long = InstanceLimits {
            max_frames: MAX_FRAMES + 1,
            ..Default::default()
        };
        assert!(matches!(too_long.validate(), Err(Error::Usage(_))));
        let bad_duration = InstanceLimits {
            extra_durations: vec![1],
            ..Default::default()
        };
        assert!(bad_duration.validate().is_err());
    }
}
