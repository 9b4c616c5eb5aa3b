use std::fs;
use std::path::Path;
use std::time::Instant;

use multiblank::Result;

use super::{decode_all, decode_metrics, eval_data, load_checkpoint, model_metrics};
use crate::config::RunConfig;
use crate::io_error;
use crate::report::RunReport;

pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunReport> {
    let mut report = RunReport::new("decode", config);
    let start = Instant::now();
    let ckpt = load_checkpoint(config.checkpoint.as_ref(), "checkpoint")?;
    let data = eval_data(config)?;
    let run = decode_all(&ckpt.params, &data, config.batch_size, config.max_symbols)?;

    model_metrics(&mut report, "", &ckpt);
    report.metric("batch_size", config.batch_size);
    report.metrics.extend(decode_metrics(&data, &run.results, &ckpt.params.blank_set));
    if let Some(dir) = out {
        let path = dir.join("hypotheses.jsonl");
        let mut text = String::new();
        for r in &run.results {
            text += &serde_json::to_string(r).expect("decode result serializes");
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        report.artifacts.insert("hypotheses".into(), "hypotheses.jsonl".into());
    }
    report.timing.details.insert("decode_seconds".into(), run.wall_seconds);
    report.timing.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
