//! Greedy decoding for multi-blank transducers.
//!
//! A decoding step is one scorer evaluation followed by an argmax. Emitting a
//! label keeps the frame cursor in place; emitting the blank of duration `m`
//! moves it forward by `m` frames, which is where the speedup comes from.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::BlankSet;
use crate::numerics::argmax;

/// Default cap on consecutive label emissions at one frame.
pub const DEFAULT_MAX_SYMBOLS_PER_FRAME: usize = 10;

/// Source of joint-network activations for a decoding state.
pub trait Scorer {
    /// Label vocabulary size `V`; the `|N|` blank outputs follow the labels.
    fn vocab_size(&self) -> usize;

    /// Activations over `V + |N|` outputs at `frame`, given the labels emitted so far.
    fn score(&self, frame: usize, history: &[usize]) -> Vec<f64>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn score(&self, frame: usize, history: &[usize]) -> Vec<f64> {
        (**self).score(frame, history)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionKind {
    Label(usize),
    Blank(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionEvent {
    pub kind: EmissionKind,
    /// Frame cursor when the symbol was emitted.
    pub frame: usize,
    /// Ordinal of the decoding step within the utterance.
    pub step: usize,
    /// Frames the cursor actually moved after this event. Equals the blank
    /// duration for exact decoding; batched decoding may move less.
    pub advance: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    pub trace: Vec<EmissionEvent>,
    pub steps: usize,
    /// Utterance length `T`.
    pub frames: usize,
}

impl DecodeResult {
    pub fn blank_count(&self) -> usize {
        self.trace
            .iter()
            .filter(|e| matches!(e.kind, EmissionKind::Blank(_)))
            .count()
    }

    /// Frames covered by the emitted blanks' own durations.
    pub fn blank_frames(&self) -> usize {
        self.trace
            .iter()
            .map(|e| match e.kind {
                EmissionKind::Blank(m) => m,
                EmissionKind::Label(_) => 0,
            })
            .sum()
    }
}

/// Per-utterance decoding state shared by the exact and batched decoders.
struct Decoding {
    vocab: usize,
    history: Vec<usize>,
    trace: Vec<EmissionEvent>,
    labels_at_frame: usize,
}

impl Decoding {
    fn new(vocab: usize) -> Self {
        Self {
            vocab,
            history: Vec::new(),
            trace: Vec::new(),
            labels_at_frame: 0,
        }
    }

    /// One decoding step at `frame`. Returns the blank duration if a blank was emitted.
    fn step<S: Scorer>(
        &mut self,
        scorer: &S,
        frame: usize,
        blank_set: &BlankSet,
        max_symbols: usize,
    ) -> Result<Option<usize>> {
        let step = self.trace.len();
        let kind = if self.labels_at_frame >= max_symbols {
            EmissionKind::Blank(1)
        } else {
            let scores = scorer.score(frame, &self.history);
            let width = self.vocab + blank_set.len();
            if scores.len() != width {
                return Err(Error::usage(format!(
                    "scorer returned {} activations, expected V + |N| = {width}",
                    scores.len()
                )));
            }
            let best = argmax(&scores).expect("width is positive");
            if best < self.vocab {
                EmissionKind::Label(best)
            } else {
                EmissionKind::Blank(blank_set.durations()[best - self.vocab])
            }
        };
        let advance = match kind {
            EmissionKind::Label(id) => {
                self.history.push(id);
                self.labels_at_frame += 1;
                0
            }
            EmissionKind::Blank(m) => m,
        };
        self.trace.push(EmissionEvent {
            kind,
            frame,
            step,
            advance,
        });
        Ok(match kind {
            EmissionKind::Blank(m) => Some(m),
            EmissionKind::Label(_) => None,
        })
    }

    /// Moves to a new frame; the last event was the blank that caused it.
    fn advanced_by(&mut self, frames: usize) {
        if let Some(last) = self.trace.last_mut() {
            last.advance = frames;
        }
        self.labels_at_frame = 0;
    }

    fn finish(self, frames: usize) -> DecodeResult {
        DecodeResult {
            tokens: self.history,
            steps: self.trace.len(),
            trace: self.trace,
            frames,
        }
    }
}

fn check_max_symbols(max_symbols: usize) -> Result<()> {
    if max_symbols == 0 {
        return Err(Error::usage("max_symbols_per_frame must be at least 1"));
    }
    Ok(())
}

/// Exact greedy decoding: the cursor advances by exactly the emitted blank's
/// duration, and decoding stops once it reaches or passes `frames`.
///
/// After `max_symbols` consecutive labels at one frame a standard blank is
/// forced without consulting the scorer.
pub fn greedy_decode<S: Scorer>(
    scorer: &S,
    frames: usize,
    blank_set: &BlankSet,
    max_symbols: usize,
) -> Result<DecodeResult> {
    check_max_symbols(max_symbols)?;
    let mut state = Decoding::new(scorer.vocab_size());
    let mut t = 0;
    while t < frames {
        if let Some(m) = state.step(scorer, t, blank_set, max_symbols)? {
            t += m;
            state.advanced_by(m);
        }
    }
    Ok(state.finish(frames))
}

/// Inexact batched greedy decoding over a shared frame cursor.
///
/// Each round, every active utterance scores at the cursor until it emits a
/// blank. The cursor then moves by the smallest emitted duration; utterances
/// that predicted a longer blank score again at the new cursor. An utterance
/// stops once the cursor reaches its length. With a single utterance this is
/// exactly [`greedy_decode`].
pub fn batched_greedy_decode<S: Scorer>(
    scorers: &[S],
    lengths: &[usize],
    blank_set: &BlankSet,
    max_symbols: usize,
) -> Result<Vec<DecodeResult>> {
    if scorers.is_empty() {
        return Err(Error::usage("batched decoding needs at least one utterance"));
    }
    if scorers.len() != lengths.len() {
        return Err(Error::usage(format!(
            "{} scorers but {} lengths",
            scorers.len(),
            lengths.len()
        )));
    }
    check_max_symbols(max_symbols)?;

    let mut states: Vec<Decoding> = scorers.iter().map(|s| Decoding::new(s.vocab_size())).collect();
    let mut cursor = 0;
    loop {
        let active: Vec<usize> = (0..scorers.len()).filter(|&i| cursor < lengths[i]).collect();
        if active.is_empty() {
            break;
        }
        // lockstep: all utterances still without a blank take one step together
        let mut pending = active.clone();
        let mut shortest = usize::MAX;
        while !pending.is_empty() {
            let mut still = Vec::with_capacity(pending.len());
            for &i in &pending {
                match states[i].step(&scorers[i], cursor, blank_set, max_symbols)? {
                    Some(m) => shortest = shortest.min(m),
                    None => still.push(i),
                }
            }
            pending = still;
        }
        for &i in &active {
            states[i].advanced_by(shortest);
        }
        cursor += shortest;
    }
    Ok(states
        .into_iter()
        .zip(lengths)
        .map(|(s, &frames)| s.finish(frames))
        .collect())
}

/// Histogram bucket: all labels share one bucket, each blank duration has its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EmissionBucket {
    Label,
    Blank(usize),
}

impl fmt::Display for EmissionBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmissionBucket::Label => f.write_str("label"),
            EmissionBucket::Blank(m) => write!(f, "blank_{m}"),
        }
    }
}

impl From<EmissionKind> for EmissionBucket {
    fn from(kind: EmissionKind) -> Self {
        match kind {
            EmissionKind::Label(_) => EmissionBucket::Label,
            EmissionKind::Blank(m) => EmissionBucket::Blank(m),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmissionHistogram {
    counts: BTreeMap<EmissionBucket, usize>,
}

impl EmissionHistogram {
    /// Histogram with a zero bucket for labels and for every duration in `blank_set`.
    pub fn for_blank_set(blank_set: &BlankSet) -> Self {
        let mut counts = BTreeMap::new();
        counts.insert(EmissionBucket::Label, 0);
        for m in blank_set.iter() {
            counts.insert(EmissionBucket::Blank(m), 0);
        }
        Self { counts }
    }

    pub fn record(&mut self, result: &DecodeResult) {
        for event in &result.trace {
            *self.counts.entry(event.kind.into()).or_insert(0) += 1;
        }
    }

    pub fn count(&self, bucket: EmissionBucket) -> usize {
        self.counts.get(&bucket).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Count of blanks with duration of at least `min_duration`.
    pub fn blanks_at_least(&self, min_duration: usize) -> usize {
        self.counts
            .iter()
            .filter_map(|(b, &c)| match b {
                EmissionBucket::Blank(m) if *m >= min_duration => Some(c),
                _ => None,
            })
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EmissionBucket, usize)> + '_ {
        self.counts.iter().map(|(&b, &c)| (b, c))
    }
}

pub fn emission_histogram(results: &[DecodeResult]) -> EmissionHistogram {
    let mut hist = EmissionHistogram::default();
    for r in results {
        hist.record(r);
    }
    hist
}

/// Decoded utterance set plus the wall-clock time it took.
#[derive(Debug, Clone)]
pub struct DecodeRun {
    pub results: Vec<DecodeResult>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub utterances: usize,
    pub baseline_steps: usize,
    pub candidate_steps: usize,
    pub baseline_mean_steps: f64,
    pub candidate_mean_steps: f64,
    /// `(1 - candidate / baseline) * 100`.
    pub step_reduction_pct: f64,
    /// `(baseline / candidate - 1) * 100`.
    pub step_speedup_pct: f64,
    pub baseline_wall_seconds: f64,
    pub candidate_wall_seconds: f64,
    /// `None` when the candidate took no measurable time.
    pub wall_speedup_pct: Option<f64>,
}

pub fn speedup_report(baseline: &DecodeRun, candidate: &DecodeRun) -> Result<SpeedupReport> {
    if baseline.results.len() != candidate.results.len() {
        return Err(Error::usage(format!(
            "baseline has {} utterances, candidate {}",
            baseline.results.len(),
            candidate.results.len()
        )));
    }
    if let Some(i) = baseline
        .results
        .iter()
        .zip(&candidate.results)
        .position(|(b, c)| b.frames != c.frames)
    {
        return Err(Error::usage(format!(
            "utterance {i} has different frame counts in baseline and candidate"
        )));
    }
    let n = baseline.results.len();
    let base: usize = baseline.results.iter().map(|r| r.steps).sum();
    let cand: usize = candidate.results.iter().map(|r| r.steps).sum();
    let mean = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    let (reduction, speedup) = match (base, cand) {
        (0, 0) => (0.0, 0.0),
        (_, 0) | (0, _) => {
            return Err(Error::usage("cannot compare an empty decode against a non-empty one"))
        }
        (b, c) => (
            (1.0 - c as f64 / b as f64) * 100.0,
            (b as f64 / c as f64 - 1.0) * 100.0,
        ),
    };
    let wall_speedup = (candidate.wall_seconds > 0.0)
        .then(|| (baseline.wall_seconds / candidate.wall_seconds - 1.0) * 100.0);
    Ok(SpeedupReport {
        utterances: n,
        baseline_steps: base,
        candidate_steps: cand,
        baseline_mean_steps: mean(base),
        candidate_mean_steps: mean(cand),
        step_reduction_pct: reduction,
        step_speedup_pct: speedup,
        baseline_wall_seconds: baseline.wall_seconds,
        candidate_wall_seconds: candidate.wall_seconds,
        wall_speedup_pct: wall_speedup,
    })
}

/// Levenshtein distance between two token sequences.
pub fn edit_distance(reference: &[usize], hypothesis: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Total edit distance over total reference tokens, as a fraction.
pub fn token_error_rate<'a>(pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>) -> f64 {
    let (mut errors, mut words) = (0usize, 0usize);
    for (reference, hypothesis) in pairs {
        errors += edit_distance(reference, hypothesis);
        words += reference.len();
    }
    if words == 0 {
        0.0
    } else {
        errors as f64 / words as f64
    }
}
