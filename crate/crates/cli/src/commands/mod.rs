pub mod bench;
pub mod decode;
pub mod emissions;
pub mod train;
pub mod verify;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use multiblank::data::{load_dataset, synth_generate, Utterance};
use multiblank::decode::{
    batched_greedy_decode, greedy_decode, token_error_rate, DecodeResult,
    DecodeRun, EmissionHistogram,
};
use multiblank::toymodel::{Checkpoint, ToyModelParams, ToyScorer};
use multiblank::{BlankSet, Error, Result};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::io_error;
use crate::report::RunReport;

pub(crate) fn train_data(config: &RunConfig) -> Result<Vec<Utterance>> {
    match &config.data.train {
        Some(path) => load_dataset(path),
        None => synth_generate(&config.data.synth_train),
    }
}

pub(crate) fn eval_data(config: &RunConfig) -> Result<Vec<Utterance>> {
    match &config.data.test {
        Some(path) => load_dataset(path),
        None => synth_generate(&config.data.synth_test),
    }
}

pub(crate) fn load_checkpoint(path: Option<&PathBuf>, what: &str) -> Result<Checkpoint> {
    let path = path.ok_or_else(|| Error::Usage(format!("--{what} is required")))?;
    Checkpoint::load(path)
}

/// Rejects data whose feature size or label ids the model cannot handle.
pub(crate) fn check_compatible(params: &ToyModelParams, data: &[Utterance]) -> Result<()> {
    let dims = params.dims;
    for (i, utt) in data.iter().enumerate() {
        if let Some(f) = utt.frames.iter().map(Vec::len).find(|&f| f != dims.features) {
            return Err(Error::Config(format!(
                "utterance {i} has {f}-dimensional frames, model expects {}",
                dims.features
            )));
        }
        if let Some(&k) = utt.labels.iter().find(|&&k| k >= dims.vocab) {
            return Err(Error::Config(format!(
                "utterance {i} has label {k}, model vocabulary is {}",
                dims.vocab
            )));
        }
    }
    Ok(())
}

/// Decodes every utterance; `batch_size` 1 is exact greedy, larger is batched.
///
/// Batches are consecutive runs of `batch_size` utterances and are decoded
/// in parallel; results come back in data order.
pub fn decode_all(
    params: &ToyModelParams,
    data: &[Utterance],
    batch_size: usize,
    max_symbols: usize,
) -> Result<DecodeRun> {
    if batch_size == 0 {
        return Err(Error::Usage("batch size must be at least 1".into()));
    }
    check_compatible(params, data)?;
    let blank_set = &params.blank_set;
    let start = Instant::now();
    let batches: Vec<Vec<DecodeResult>> = data
        .par_chunks(batch_size)
        .map(|chunk| {
            let scorers = chunk
                .iter()
                .map(|u| ToyScorer::new(params, &u.frames))
                .collect::<Result<Vec<_>>>()?;
            if batch_size == 1 {
                let r = greedy_decode(&scorers[0], chunk[0].num_frames(), blank_set, max_symbols)?;
                Ok(vec![r])
            } else {
                let lengths: Vec<usize> = chunk.iter().map(Utterance::num_frames).collect();
                batched_greedy_decode(&scorers, &lengths, blank_set, max_symbols)
            }
        })
        .collect::<Result<_>>()?;
    Ok(DecodeRun {
        results: batches.into_iter().flatten().collect(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

pub(crate) fn data_token_error_rate(data: &[Utterance], results: &[DecodeResult]) -> f64 {
    token_error_rate(
        data.iter()
            .zip(results)
            .map(|(u, r)| (u.labels.as_slice(), r.tokens.as_slice())),
    )
}

/// Token error rate, step counts and emission histogram of one decoded set.
pub(crate) fn decode_metrics(
    data: &[Utterance],
    results: &[DecodeResult],
    blank_set: &BlankSet,
) -> BTreeMap<String, serde_json::Value> {
    let hist = histogram(results, blank_set);
    let steps: usize = results.iter().map(|r| r.steps).sum();
    let frames: usize = results.iter().map(|r| r.frames).sum();
    let tokens: usize = results.iter().map(|r| r.tokens.len()).sum();
    let counts: BTreeMap<String, usize> = hist.iter().map(|(b, c)| (b.to_string(), c)).collect();
    let mean = |x: usize| if results.is_empty() { 0.0 } else { x as f64 / results.len() as f64 };
    let mut m = BTreeMap::new();
    m.insert("utterances".into(), results.len().into());
    m.insert("token_error_rate".into(), data_token_error_rate(data, results).into());
    m.insert("total_steps".into(), steps.into());
    m.insert("mean_steps".into(), mean(steps).into());
    m.insert("total_frames".into(), frames.into());
    m.insert("emitted_tokens".into(), tokens.into());
    m.insert("emissions".into(), serde_json::to_value(counts).expect("counts serialize"));
    m
}

/// Emission counts with a row for every duration in `blank_set`, even if zero.
pub(crate) fn histogram(results: &[DecodeResult], blank_set: &BlankSet) -> EmissionHistogram {
    let mut hist = EmissionHistogram::for_blank_set(blank_set);
    for r in results {
        hist.record(r);
    }
    hist
}

/// Writes a CSV table with a header row and LF line endings.
pub(crate) fn write_csv<R, I>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator,
    I::Item: AsRef<[u8]>,
{
    let csv_error = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => io_error(path, io),
        other => Error::Usage(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub(crate) fn model_metrics(report: &mut RunReport, prefix: &str, ckpt: &Checkpoint) {
    report.metric(&format!("{prefix}blank_set"), ckpt.params.blank_set.to_string());
    report.metric(&format!("{prefix}sigma"), ckpt.sigma);
}
