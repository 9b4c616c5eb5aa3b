use std::path::Path;
use std::time::Instant;

use multiblank::loss::{ActivationLattice, LossConfig, LossResult};
use multiblank::oracle::{brute_force_loss, finite_diff_grad, random_instance, Instance};
use multiblank::{loss_and_grad, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, VerifyConfig};
use crate::report::RunReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub trials: usize,
    pub grad_trials: usize,
    /// Largest `|loss - oracle loss|`.
    pub max_loss_deviation: f64,
    /// Largest `|alpha(T, U) - beta(0, 0)|`.
    pub max_forward_backward_gap: f64,
    /// Largest relative error of the analytic against the central-difference gradient.
    pub max_grad_rel_error: f64,
    pub loss_failures: usize,
    pub grad_failures: usize,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.loss_failures == 0 && self.grad_failures == 0
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Runs `config.trials` random instances through `loss_fn` and the oracle.
///
/// The first `config.grad_trials` instances also compare gradients against
/// central differences of the oracle loss.
pub fn verify_with<L>(config: &VerifyConfig, seed: u64, loss_fn: L) -> Result<VerifySummary>
where
    L: Fn(&ActivationLattice, &[usize], &LossConfig) -> Result<LossResult> + Sync,
{
    config.limits.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (0..config.trials)
        .map(|_| random_instance(&mut rng, &config.limits))
        .collect::<Result<Vec<Instance>>>()?;

    struct Check {
        loss_dev: f64,
        fb_gap: f64,
        grad_err: Option<f64>,
    }
    let checks = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let res = loss_fn(&inst.activations, &inst.labels, &inst.config)?;
            let oracle = brute_force_loss(&inst.activations, &inst.labels, &inst.config)?;
            let fb_gap = (res.lattices.forward_total() - res.lattices.backward_total()).abs();
            let grad_err = if i < config.grad_trials {
                let fd = finite_diff_grad(&inst.activations, &inst.labels, &inst.config, config.fd_step)?;
                let worst = res
                    .grad
                    .as_slice()
                    .iter()
                    .zip(fd.as_slice())
                    .map(|(&a, &n)| relative_error(a, n, config.grad_floor))
                    .fold(0.0, f64::max);
                Some(worst)
            } else {
                None
            };
            Ok(Check {
                loss_dev: (res.loss - oracle).abs(),
                fb_gap,
                grad_err,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut s = VerifySummary {
        trials: checks.len(),
        grad_trials: 0,
        max_loss_deviation: 0.0,
        max_forward_backward_gap: 0.0,
        max_grad_rel_error: 0.0,
        loss_failures: 0,
        grad_failures: 0,
    };
    for c in &checks {
        s.max_loss_deviation = s.max_loss_deviation.max(c.loss_dev);
        s.max_forward_backward_gap = s.max_forward_backward_gap.max(c.fb_gap);
        // NaN fails the comparison and counts as a failure
        if !(c.loss_dev <= config.loss_tolerance && c.fb_gap <= config.loss_tolerance) {
            s.loss_failures += 1;
        }
        if let Some(e) = c.grad_err {
            s.grad_trials += 1;
            s.max_grad_rel_error = s.max_grad_rel_error.max(e);
            if !(e <= config.grad_tolerance) {
                s.grad_failures += 1;
            }
        }
    }
    Ok(s)
}

/// The `verify` command with a pluggable loss, so a broken recursion can be fed in.
pub fn run_with<L>(config: &RunConfig, _out: Option<&Path>, loss_fn: L) -> Result<RunReport>
where
    L: Fn(&ActivationLattice, &[usize], &LossConfig) -> Result<LossResult> + Sync,
{
    let mut report = RunReport::new("verify", config);
    let start = Instant::now();
    let summary = verify_with(&config.verify, config.seed, loss_fn)?;
    report.timing.wall_seconds = start.elapsed().as_secs_f64();
    report.passed = summary.passed();
    report.metric("trials", summary.trials);
    report.metric("grad_trials", summary.grad_trials);
    report.metric("max_loss_deviation", summary.max_loss_deviation);
    report.metric("max_forward_backward_gap", summary.max_forward_backward_gap);
    report.metric("max_grad_rel_error", summary.max_grad_rel_error);
    report.metric("loss_failures", summary.loss_failures);
    report.metric("grad_failures", summary.grad_failures);
    Ok(report)
}

pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunReport> {
    run_with(config, out, loss_and_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use multiblank::Error;

    fn small(trials: usize, grad_trials: usize) -> VerifyConfig {
        let mut c = VerifyConfig {
            trials,
            grad_trials,
            ..VerifyConfig::default()
        };
        c.limits.max_frames = 4;
        c.limits.max_labels = 2;
        c
    }

    #[test]
    fn zero_trials_pass_trivially() {
        let s = verify_with(&small(0, 0), 1, loss_and_grad).unwrap();
        assert!(s.passed());
        assert_eq!((s.trials, s.grad_trials), (0, 0));
        assert_eq!(s.max_loss_deviation, 0.0);
    }

    #[test]
    fn correct_loss_passes() {
        let s = verify_with(&small(60, 10), 2, loss_and_grad).unwrap();
        assert!(s.passed(), "{s:?}");
        assert_eq!(s.grad_trials, 10);
    }

    #[test]
    fn shifted_loss_is_caught() {
        let broken = |a: &ActivationLattice, l: &[usize], c: &LossConfig| {
            let mut r = loss_and_grad(a, l, c)?;
            r.loss += 1e-6;
            Ok(r)
        };
        let s = verify_with(&small(20, 0), 3, broken).unwrap();
        assert_eq!(s.loss_failures, 20);
    }

    #[test]
    fn oracle_caps_enforced() {
        let mut c = small(1, 0);
        c.limits.max_frames = 100;
        assert!(matches!(verify_with(&c, 0, loss_and_grad), Err(Error::Usage(_))));
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-3), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-3) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 1e-3) - 1e-6).abs() < 1e-18);
    }
}
