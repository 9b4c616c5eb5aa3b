//! Multi-blank transducer loss.
//!
//! Lattice states are `(t, u)`: `t` frames consumed and `u` labels emitted.
//! The start state is `(0, 0)` and the terminal state is `(T, U)`. From state
//! `(t, u)` with `t < T`:
//!
//! * the label arc reads output `labels[u]` at frame `t` and moves to `(t, u + 1)`;
//! * the blank arc of duration `m` reads output `V + j` (where `N[j] = m`) at
//!   frame `t` and moves to `(t + m, u)`, and exists only when `t + m <= T`.
//!
//! Arc weights are under-normalized log-probabilities: `log_softmax(z) - sigma`.
//! A path therefore scores `log P(path) - sigma * |path|`, and the loss is the
//! negated log-sum of path scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{is_log_zero, log_add, log_softmax_in_place, LogGrid, Tensor3, LOG_ZERO};

/// Ordered set of blank durations. Always contains the standard blank (1).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlankSet {
    durations: Vec<usize>,
}

impl BlankSet {
    /// Builds a blank set from durations in any order.
    pub fn new(mut durations: Vec<usize>) -> Result<Self> {
        durations.sort_unstable();
        if durations.first() == Some(&0) {
            return Err(Error::usage("blank durations must be positive"));
        }
        if durations.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::usage(format!(
                "duplicate blank duration in {durations:?}"
            )));
        }
        if durations.first() != Some(&1) {
            return Err(Error::usage(format!(
                "blank set {durations:?} must contain the standard blank 1"
            )));
        }
        Ok(Self { durations })
    }

    /// The standard transducer blank set `{1}`.
    pub fn standard() -> Self {
        Self { durations: vec![1] }
    }

    pub fn durations(&self) -> &[usize] {
        &self.durations
    }

    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn max_duration(&self) -> usize {
        *self.durations.last().expect("blank set is never empty")
    }

    /// Position of duration `m` in the ascending order, i.e. its offset past the labels.
    pub fn index_of(&self, m: usize) -> Option<usize> {
        self.durations.binary_search(&m).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.durations.iter().copied()
    }
}

impl TryFrom<Vec<usize>> for BlankSet {
    type Error = Error;

    fn try_from(durations: Vec<usize>) -> Result<Self> {
        BlankSet::new(durations)
    }
}

impl From<BlankSet> for Vec<usize> {
    fn from(set: BlankSet) -> Self {
        set.durations
    }
}

impl FromStr for BlankSet {
    type Err = Error;

    /// Parses a comma separated list such as `1,2,4`.
    fn from_str(s: &str) -> Result<Self> {
        let durations = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::usage(format!("bad blank duration {p:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        BlankSet::new(durations)
    }
}

impl fmt::Display for BlankSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.durations.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Under-normalization strength; 0 gives the ordinary normalized loss.
    pub sigma: f64,
    pub blank_set: BlankSet,
}

impl LossConfig {
    pub fn new(sigma: f64, blank_set: BlankSet) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::usage(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { sigma, blank_set })
    }
}

/// Sizes shared by activation and arc-weight lattices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeShape {
    /// Frame count `T`.
    pub frames: usize,
    /// Label count `U`.
    pub labels: usize,
    /// Label vocabulary size `V`, excluding blanks.
    pub vocab: usize,
    /// Number of blank outputs `|N|`.
    pub blanks: usize,
}

impl LatticeShape {
    /// Output width `V + |N|`.
    pub fn width(&self) -> usize {
        self.vocab + self.blanks
    }

    fn from_tensor(values: &Tensor3, vocab: usize, blanks: usize) -> Result<Self> {
        let (frames, positions, width) = values.dims();
        if frames == 0 {
            return Err(Error::usage("lattice needs at least one frame"));
        }
        if positions == 0 {
            return Err(Error::usage("lattice needs U + 1 >= 1 label positions"));
        }
        if vocab == 0 {
            return Err(Error::usage("vocabulary must contain at least one label"));
        }
        if width != vocab + blanks {
            return Err(Error::usage(format!(
                "lattice width {width} does not match V + |N| = {vocab} + {blanks}"
            )));
        }
        Ok(Self {
            frames,
            labels: positions - 1,
            vocab,
            blanks,
        })
    }
}

/// Raw joint-network outputs `z(t, u, k)`, dims `(T, U + 1, V + |N|)`.
///
/// Output `k < V` is label `k`; output `V + j` is the blank of duration `N[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLattice {
    shape: LatticeShape,
    values: Tensor3,
}

impl ActivationLattice {
    pub fn new(values: Tensor3, vocab: usize, blank_set: &BlankSet) -> Result<Self> {
        let shape = LatticeShape::from_tensor(&values, vocab, blank_set.len())?;
        if let Some(i) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!("activation {i} is not finite")));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> LatticeShape {
        self.shape
    }

    pub fn values(&self) -> &Tensor3 {
        &self.values
    }

    pub fn into_values(self) -> Tensor3 {
        self.values
    }
}

/// Under-normalized log arc weights, same layout as [`ActivationLattice`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArcWeightLattice {
    shape: LatticeShape,
    values: Tensor3,
}

impl ArcWeightLattice {
    /// Wraps precomputed log-weights. Mostly useful for tests and diagnostics.
    pub fn from_log_weights(values: Tensor3, vocab: usize, blank_set: &BlankSet) -> Result<Self> {
        let shape = LatticeShape::from_tensor(&values, vocab, blank_set.len())?;
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> LatticeShape {
        self.shape
    }

    pub fn values(&self) -> &Tensor3 {
        &self.values
    }

    #[inline]
    fn label_weight(&self, t: usize, u: usize, label: usize) -> f64 {
        self.values.get(t, u, label)
    }

    #[inline]
    fn blank_weight(&self, t: usize, u: usize, j: usize) -> f64 {
        self.values.get(t, u, self.shape.vocab + j)
    }
}

/// `log_softmax(z(t, u, ·)) - sigma` for every lattice cell.
pub fn under_normalize(activations: &ActivationLattice, sigma: f64) -> Result<ArcWeightLattice> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::usage(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let shape = activations.shape;
    let mut values = activations.values.clone();
    for t in 0..shape.frames {
        for u in 0..=shape.labels {
            let row = values.row_mut(t, u);
            log_softmax_in_place(row);
            for v in row.iter_mut() {
                *v -= sigma;
            }
        }
    }
    Ok(ArcWeightLattice { shape, values })
}

/// Forward and backward log-weights over the `(T + 1) x (U + 1)` state grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaBetaLattice {
    pub alpha: LogGrid,
    pub beta: LogGrid,
}

impl AlphaBetaLattice {
    /// `alpha(T, U)`: log-sum of all path weights.
    pub fn forward_total(&self) -> f64 {
        self.alpha.get(self.alpha.rows() - 1, self.alpha.cols() - 1)
    }

    /// `beta(0, 0)`: the same quantity computed by the backward pass.
    pub fn backward_total(&self) -> f64 {
        self.beta.get(0, 0)
    }
}

/// Output of one dynamic-programming pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePass {
    pub weights: LogGrid,
    /// Log-sum over all complete paths, or [`LOG_ZERO`] when there are none.
    pub total: f64,
}

impl LatticePass {
    pub fn is_feasible(&self) -> bool {
        !is_log_zero(self.total)
    }
}

fn check_inputs(arcs: &ArcWeightLattice, labels: &[usize], blank_set: &BlankSet) -> Result<()> {
    let shape = arcs.shape;
    if shape.blanks != blank_set.len() {
        return Err(Error::usage(format!(
            "lattice has {} blank outputs but blank set {blank_set} has {}",
            shape.blanks,
            blank_set.len()
        )));
    }
    if labels.len() != shape.labels {
        return Err(Error::usage(format!(
            "lattice is built for U = {} labels, got {}",
            shape.labels,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= shape.vocab) {
        return Err(Error::usage(format!(
            "label id {bad} outside vocabulary of size {}",
            shape.vocab
        )));
    }
    Ok(())
}

/// Forward recursion: `alpha(t, u)` sums all partial paths from `(0, 0)` to `(t, u)`.
pub fn forward(arcs: &ArcWeightLattice, labels: &[usize], blank_set: &BlankSet) -> Result<LatticePass> {
    check_inputs(arcs, labels, blank_set)?;
    let (frames, n_labels) = (arcs.shape.frames, arcs.shape.labels);
    let mut alpha = LogGrid::new(frames + 1, n_labels + 1);
    alpha.set(0, 0, 0.0);
    for t in 0..=frames {
        for u in 0..=n_labels {
            if t == 0 && u == 0 {
                continue;
            }
            let mut acc = LOG_ZERO;
            if u > 0 && t < frames {
                acc = log_add(acc, alpha.get(t, u - 1) + arcs.label_weight(t, u - 1, labels[u - 1]));
            }
            for (j, m) in blank_set.iter().enumerate() {
                if m > t {
                    // durations are ascending
                    break;
                }
                acc = log_add(acc, alpha.get(t - m, u) + arcs.blank_weight(t - m, u, j));
            }
            alpha.set(t, u, acc);
        }
    }
    let total = alpha.get(frames, n_labels);
    Ok(LatticePass { weights: alpha, total })
}

/// Backward recursion: `beta(t, u)` sums all partial paths from `(t, u)` to `(T, U)`.
pub fn backward(arcs: &ArcWeightLattice, labels: &[usize], blank_set: &BlankSet) -> Result<LatticePass> {
    check_inputs(arcs, labels, blank_set)?;
    let (frames, n_labels) = (arcs.shape.frames, arcs.shape.labels);
    let mut beta = LogGrid::new(frames + 1, n_labels + 1);
    beta.set(frames, n_labels, 0.0);
    for t in (0..frames).rev() {
        for u in (0..=n_labels).rev() {
            let mut acc = LOG_ZERO;
            if u < n_labels {
                acc = log_add(acc, beta.get(t, u + 1) + arcs.label_weight(t, u, labels[u]));
            }
            for (j, m) in blank_set.iter().enumerate() {
                if t + m > frames {
                    break;
                }
                acc = log_add(acc, beta.get(t + m, u) + arcs.blank_weight(t, u, j));
            }
            beta.set(t, u, acc);
        }
    }
    let total = beta.get(0, 0);
    Ok(LatticePass { weights: beta, total })
}

/// Posterior probability of every lattice arc, laid out like the arc weights.
///
/// Entries for outputs that are not arcs at that cell (wrong label, blank
/// running past the last frame) are zero.
pub fn occupancy(
    lattices: &AlphaBetaLattice,
    arcs: &ArcWeightLattice,
    labels: &[usize],
    blank_set: &BlankSet,
) -> Result<Tensor3> {
    check_inputs(arcs, labels, blank_set)?;
    let shape = arcs.shape;
    let (alpha, beta) = (&lattices.alpha, &lattices.beta);
    if alpha.rows() != shape.frames + 1
        || alpha.cols() != shape.labels + 1
        || beta.rows() != alpha.rows()
        || beta.cols() != alpha.cols()
    {
        return Err(Error::usage(format!(
            "alpha/beta grids {}x{} / {}x{} do not match lattice T = {}, U = {}",
            alpha.rows(),
            alpha.cols(),
            beta.rows(),
            beta.cols(),
            shape.frames,
            shape.labels
        )));
    }
    let total = lattices.forward_total();
    let mut gamma = Tensor3::zeros(shape.frames, shape.labels + 1, shape.width());
    if is_log_zero(total) {
        return Ok(gamma);
    }
    for t in 0..shape.frames {
        for u in 0..=shape.labels {
            let a = alpha.get(t, u);
            if is_log_zero(a) {
                continue;
            }
            if u < shape.labels {
                let k = labels[u];
                let w = arcs.label_weight(t, u, k);
                gamma.set(t, u, k, (a + w + beta.get(t, u + 1) - total).exp());
            }
            for (j, m) in blank_set.iter().enumerate() {
                if t + m > shape.frames {
                    break;
                }
                let w = arcs.blank_weight(t, u, j);
                gamma.set(t, u, shape.vocab + j, (a + w + beta.get(t + m, u) - total).exp());
            }
        }
    }
    Ok(gamma)
}

#[derive(Debug, Clone)]
pub struct LossResult {
    /// `-log Σ_π exp(weight(π))`.
    pub loss: f64,
    /// `d loss / d z(t, u, k)` with respect to the raw activations.
    pub grad: Tensor3,
    pub lattices: AlphaBetaLattice,
}

/// Loss value and gradient with respect to the raw activations.
///
/// The arc-level gradient `-gamma` is chained through each cell's log-softmax:
/// `d loss / d z(t,u,k) = softmax(z(t,u,·))_k * G(t,u) - gamma(t,u,k)` with
/// `G(t,u) = Σ_k gamma(t,u,k)`. The constant `sigma` shift has no effect on
/// the chain rule.
pub fn loss_and_grad(
    activations: &ActivationLattice,
    labels: &[usize],
    config: &LossConfig,
) -> Result<LossResult> {
    let arcs = under_normalize(activations, config.sigma)?;
    let fwd = forward(&arcs, labels, &config.blank_set)?;
    if !fwd.is_feasible() {
        return Err(Error::Infeasible {
            frames: arcs.shape.frames,
            labels: arcs.shape.labels,
            durations: config.blank_set.durations().to_vec(),
        });
    }
    let bwd = backward(&arcs, labels, &config.blank_set)?;
    let lattices = AlphaBetaLattice {
        alpha: fwd.weights,
        beta: bwd.weights,
    };
    let mut grad = occupancy(&lattices, &arcs, labels, &config.blank_set)?;
    let shape = arcs.shape;
    for t in 0..shape.frames {
        for u in 0..=shape.labels {
            let arc_row = arcs.values.row(t, u);
            let g_row = grad.row_mut(t, u);
            let mass: f64 = g_row.iter().sum();
            // arc weight + sigma is the plain log-softmax
            for (g, &w) in g_row.iter_mut().zip(arc_row) {
                *g = (w + config.sigma).exp() * mass - *g;
            }
        }
    }
    Ok(LossResult {
        loss: -fwd.total,
        grad,
        lattices,
    })
}
