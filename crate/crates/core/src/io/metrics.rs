//! Metrics CSV: one header row, one row per optimizer step.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::MetricsRow;

pub const METRICS_HEADER: [&str; 8] = [
    "step",
    "level",
    "phase",
    "train_loss",
    "val_loss",
    "lr",
    "cum_flops",
    "wall_seconds",
];

/// Append-only metrics writer; rows are flushed as they are written so a
/// crashed run still leaves a readable prefix.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            inner: csv::Writer::from_writer(file),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush().map_err(|e| Error::io("metrics.csv", e))
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for r in rows {
        w.write(r)?;
    }
    Ok(())
}

/// Reads a metrics file, rejecting a wrong header or unparsable rows.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Format(format!(
            "{}: unexpected metrics header {header:?}",
            path.display()
        )));
    }
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    let mut last = 0u64;
    for row in &rows {
        if row.cum_flops < last {
            return Err(Error::Format(format!(
                "{}: cum_flops decreases at step {}",
                path.display(),
                row.step
            )));
        }
        last = row.cum_flops;
    }
    Ok(rows)
}

/// Both runs in one long-format CSV (a `run` column plus the metrics
/// columns), for loss-vs-FLOPs plots.
pub fn write_merged(path: &Path, runs: &[(&str, &[MetricsRow])]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    let mut header = vec!["run"];
    header.extend(METRICS_HEADER);
    w.write_record(&header)?;
    for (name, rows) in runs {
        for r in rows.iter() {
            w.write_record(&[
                name.to_string(),
                r.step.to_string(),
                r.level.to_string(),
                r.phase.name().to_string(),
                r.train_loss.to_string(),
                r.val_loss.map(|v| v.to_string()).unwrap_or_default(),
                r.lr.to_string(),
                r.cum_flops.to_string(),
                r.wall_seconds.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Phase;

    fn rows() -> Vec<MetricsRow> {
        vec![
            MetricsRow {
                step: 1,
                level: 2,
                phase: Phase::Small,
                train_loss: 4.123456789012345,
                val_loss: None,
                lr: 1e-4,
                cum_flops: 10,
                wall_seconds: 0.5,
            },
            MetricsRow {
                step: 2,
                level: 1,
                phase: Phase::Final,
                train_loss: 3.0,
                val_loss: Some(0.1 + 0.2),
                lr: 0.0,
                cum_flops: 30,
                wall_seconds: 1.25,
            },
        ]
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&p, &rows()).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), rows());
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(
            text.starts_with("step,level,phase,train_loss,val_loss,lr,cum_flops,wall_seconds\n")
        );
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains(",small,"));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(read_metrics(&p).is_err());
        std::fs::write(
            &p,
            format!("{}\n1,1,final,x,,0,1,0\n", METRICS_HEADER.join(",")),
        )
        .unwrap();
        assert!(matches!(read_metrics(&p), Err(Error::Csv(_))));
    }

    #[test]
    fn merged_has_run_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("merged.csv");
        let r = rows();
        write_merged(&p, &[("baseline", &r), ("vcycle", &r)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text
            .lines()
            .nth(3)
            .unwrap()
            .starts_with("vcycle,1,2,small,"));
    }
}
