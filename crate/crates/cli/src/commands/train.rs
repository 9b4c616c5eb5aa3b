use std::path::Path;
use std::time::Instant;

use multiblank::toymodel::{init_params, Checkpoint, Trainer};
use multiblank::{Error, Result};

use super::{check_compatible, data_token_error_rate, decode_all, eval_data, train_data, write_csv};
use crate::config::RunConfig;
use crate::report::RunReport;

pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunReport> {
    let out = out.ok_or_else(|| Error::Usage("train needs --out for the checkpoint".into()))?;
    let mut report = RunReport::new("train", config);
    let start = Instant::now();

    let train_config = config.train_config();
    let params = init_params(config.seed, train_config.dims, config.blanks.clone())?;
    let train = train_data(config)?;
    let test = eval_data(config)?;
    check_compatible(&params, &train)?;
    check_compatible(&params, &test)?;

    let mut trainer = Trainer::new(params, train_config)?;
    let history = trainer.fit(&train, |_, _| {})?;
    let train_seconds = start.elapsed().as_secs_f64();

    let every = config.train.log_every;
    let curve: Vec<(usize, f64)> = history
        .chunks(every)
        .enumerate()
        .map(|(i, w)| {
            let mean = w.iter().map(|s| s.mean_loss).sum::<f64>() / w.len() as f64;
            (i * every + w.len(), mean)
        })
        .collect();
    let skipped: usize = history.iter().map(|s| s.skipped).sum();

    let eval = decode_all(&trainer.params, &test, config.batch_size, config.max_symbols)?;
    let steps: usize = eval.results.iter().map(|r| r.steps).sum();

    let ckpt = Checkpoint {
        params: trainer.params,
        sigma: config.sigma,
    };
    ckpt.save(out.join("checkpoint.json"))?;
    write_csv(
        &out.join("loss_curve.csv"),
        &["step", "mean_loss"],
        curve.iter().map(|(s, l)| [s.to_string(), l.to_string()]),
    )?;

    report.metric("blank_set", config.blanks.to_string());
    report.metric("sigma", config.sigma);
    report.metric("num_params", ckpt.params.num_params());
    report.metric("train_utterances", train.len());
    report.metric("test_utterances", test.len());
    report.metric("steps", history.len());
    report.metric("skipped_utterances", skipped);
    report.metric("loss_curve", curve.iter().map(|&(_, l)| l).collect::<Vec<_>>());
    report.metric("final_loss", curve.last().map_or(0.0, |&(_, l)| l));
    report.metric("test_token_error_rate", data_token_error_rate(&test, &eval.results));
    report.metric("test_decode_steps", steps);
    report.artifacts.insert("checkpoint".into(), "checkpoint.json".into());
    report.artifacts.insert("loss_curve".into(), "loss_curve.csv".into());
    report.timing.details.insert("train_seconds".into(), train_seconds);
    report.timing.details.insert("decode_seconds".into(), eval.wall_seconds);
    report.timing.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
