use std::path::Path;
use std::time::Instant;

use multiblank::decode::speedup_report;
use multiblank::{Error, Result};

use super::{data_token_error_rate, decode_all, eval_data, load_checkpoint, model_metrics, write_csv};
use crate::config::RunConfig;
use crate::report::RunReport;

pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunReport> {
    let mut report = RunReport::new("bench", config);
    let start = Instant::now();
    let baseline = load_checkpoint(config.baseline.as_ref(), "baseline")?;
    let candidate = load_checkpoint(config.candidate.as_ref(), "candidate")?;
    let (b, c) = (baseline.params.dims, candidate.params.dims);
    if b.vocab != c.vocab || b.features != c.features {
        return Err(Error::Config(format!(
            "baseline has vocab {} and {} features, candidate vocab {} and {} features",
            b.vocab, b.features, c.vocab, c.features
        )));
    }
    let data = eval_data(config)?;
    let base_run = decode_all(&baseline.params, &data, config.batch_size, config.max_symbols)?;
    let cand_run = decode_all(&candidate.params, &data, config.batch_size, config.max_symbols)?;
    let speedup = speedup_report(&base_run, &cand_run)?;
    let base_ter = data_token_error_rate(&data, &base_run.results);
    let cand_ter = data_token_error_rate(&data, &cand_run.results);

    model_metrics(&mut report, "baseline_", &baseline);
    model_metrics(&mut report, "candidate_", &candidate);
    report.metric("batch_size", config.batch_size);
    report.metric("utterances", speedup.utterances);
    report.metric("baseline_steps", speedup.baseline_steps);
    report.metric("candidate_steps", speedup.candidate_steps);
    report.metric("baseline_mean_steps", speedup.baseline_mean_steps);
    report.metric("candidate_mean_steps", speedup.candidate_mean_steps);
    report.metric("step_reduction_pct", speedup.step_reduction_pct);
    report.metric("step_speedup_pct", speedup.step_speedup_pct);
    report.metric("baseline_token_error_rate", base_ter);
    report.metric("candidate_token_error_rate", cand_ter);

    if let Some(dir) = out {
        let row = |name: &str, ckpt: &multiblank::toymodel::Checkpoint, steps: usize, mean: f64, ter: f64| {
            vec![
                name.to_string(),
                ckpt.params.blank_set.to_string(),
                ckpt.sigma.to_string(),
                speedup.utterances.to_string(),
                steps.to_string(),
                mean.to_string(),
                ter.to_string(),
            ]
        };
        write_csv(
            &dir.join("bench.csv"),
            &["model", "blank_set", "sigma", "utterances", "steps", "mean_steps", "token_error_rate"],
            [
                row("baseline", &baseline, speedup.baseline_steps, speedup.baseline_mean_steps, base_ter),
                row("candidate", &candidate, speedup.candidate_steps, speedup.candidate_mean_steps, cand_ter),
            ],
        )?;
        report.artifacts.insert("bench_csv".into(), "bench.csv".into());
    }
    let t = &mut report.timing.details;
    t.insert("baseline_wall_seconds".into(), speedup.baseline_wall_seconds);
    t.insert("candidate_wall_seconds".into(), speedup.candidate_wall_seconds);
    if let Some(pct) = speedup.wall_speedup_pct {
        t.insert("wall_speedup_pct".into(), pct);
    }
    report.timing.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
