use std::path::Path;
use std::time::Instant;

use multiblank::Result;

use super::{decode_all, decode_metrics, eval_data, histogram, load_checkpoint, model_metrics, write_csv};
use crate::config::RunConfig;
use crate::report::RunReport;

pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunReport> {
    let mut report = RunReport::new("emissions", config);
    let start = Instant::now();
    let ckpt = load_checkpoint(config.checkpoint.as_ref(), "checkpoint")?;
    let data = eval_data(config)?;
    let run = decode_all(&ckpt.params, &data, config.batch_size, config.max_symbols)?;
    let blank_set = &ckpt.params.blank_set;
    let hist = histogram(&run.results, blank_set);

    model_metrics(&mut report, "", &ckpt);
    report.metrics.extend(decode_metrics(&data, &run.results, blank_set));
    report.metric("total_emissions", hist.total());
    report.metric("long_blanks", hist.blanks_at_least(2));
    if let Some(dir) = out {
        write_csv(
            &dir.join("emissions.csv"),
            &["kind", "count"],
            hist.iter().map(|(b, c)| [b.to_string(), c.to_string()]),
        )?;
        report.artifacts.insert("emissions_csv".into(), "emissions.csv".into());
    }
    report.timing.details.insert("decode_seconds".into(), run.wall_seconds);
    report.timing.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
