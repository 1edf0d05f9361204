//! Tidy plot data: one row per (time, variable, series) value.

use std::io::Write;

use crate::report::Report;

pub fn variable_names(m: usize, q: usize) -> Vec<String> {
    (1..=m).map(|i| format!("u_{i}")).chain((1..=q - m).map(|i| format!("y_{i}"))).collect()
}

/// Columns `time, variable, series, value`; series are `true`, `attacked` and `recovered_<method>`.
/// Time is the 1-based sample index in the online trajectory.
pub fn write_tidy_csv<W: Write>(report: &Report, writer: W) -> csv::Result<()> {
    let (m, q) = (report.invariants.m, report.invariants.m + report.invariants.p);
    let names = variable_names(m, q);
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["time", "variable", "series", "value"])?;
    for trial in &report.trials {
        let mut series: Vec<(String, &[f64])> = vec![("true".into(), &trial.truth), ("attacked".into(), &trial.received)];
        for o in &trial.outcomes {
            if let Some(w) = &o.result.w_tilde {
                series.push((format!("recovered_{}", o.result.method.name()), w));
            }
        }
        for (label, values) in &series {
            for (i, v) in values.iter().enumerate() {
                let time = trial.start + i / q;
                wtr.write_record([time.to_string(), names[i % q].clone(), label.clone(), format!("{v:e}")])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}
