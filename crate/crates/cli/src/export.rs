//! Tab-separated trajectory files.
//!
//! Header `t x1 .. xn W Wdot`, one row per sample, every value written with
//! 17 significant digits so that reading it back recovers the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use qpstab::TrajectoryRecord;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("trajectory record is empty")]
    EmptyRecord,
    #[error("trajectory record has no Liapunov samples")]
    MissingLiapunov,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Columns of a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub header: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub w_dot: Vec<f64>,
}

pub fn header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.push("W".into());
    cols.push("Wdot".into());
    cols.join("\t")
}

pub fn render(record: &TrajectoryRecord) -> Result<String, ExportError> {
    if record.is_empty() {
        return Err(ExportError::EmptyRecord);
    }
    if record.w_samples.len() != record.len() || record.w_dot_samples.len() != record.len() {
        return Err(ExportError::MissingLiapunov);
    }
    let n = record.states[0].dim();
    let mut out = header(n);
    out.push('\n');
    for k in 0..record.len() {
        let _ = write!(out, "{:.16e}", record.times[k]);
        for v in record.states[k].as_slice() {
            let _ = write!(out, "\t{v:.16e}");
        }
        let _ = writeln!(
            out,
            "\t{:.16e}\t{:.16e}",
            record.w_samples[k], record.w_dot_samples[k]
        );
    }
    Ok(out)
}

/// Writes the record to `path`. Nothing is created when the record is rejected.
pub fn export_trajectory(record: &TrajectoryRecord, path: &Path) -> Result<(), ExportError> {
    let text = render(record)?;
    fs::write(path, text).map_err(|source| ExportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_table(text: &str) -> Result<TrajectoryTable, ExportError> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or(ExportError::Malformed {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: Vec<String> = head.split('\t').map(str::to_string).collect();
    if header.len() < 4
        || header[0] != "t"
        || header[header.len() - 2] != "W"
        || header[header.len() - 1] != "Wdot"
    {
        return Err(ExportError::Malformed {
            line: 1,
            message: format!("unexpected header {head:?}"),
        });
    }
    let n = header.len() - 3;
    let mut table = TrajectoryTable {
        header,
        times: Vec::new(),
        states: Vec::new(),
        w: Vec::new(),
        w_dot: Vec::new(),
    };
    for (i, line) in lines {
        let values = line
            .split('\t')
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ExportError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        if values.len() != n + 3 {
            return Err(ExportError::Malformed {
                line: i + 1,
                message: format!("expected {} columns, found {}", n + 3, values.len()),
            });
        }
        table.times.push(values[0]);
        table.states.push(values[1..=n].to_vec());
        table.w.push(values[n + 1]);
        table.w_dot.push(values[n + 2]);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qpstab::StateVector;

    fn record() -> TrajectoryRecord {
        TrajectoryRecord {
            times: vec![0.0, 0.5, 1.0],
            states: vec![
                StateVector::new(vec![1.0, 2.0]).unwrap(),
                StateVector::new(vec![0.1 + 0.2, 1.0 / 3.0]).unwrap(),
                StateVector::new(vec![1e-300, 7.0e12]).unwrap(),
            ],
            w_samples: vec![0.25, std::f64::consts::PI, 1e-17],
            w_dot_samples: vec![-0.0, -1.0 / 7.0, -2.5e-310],
            accepted_steps: 3,
            rejected_steps: 0,
        }
    }

    #[test]
    fn header_and_rows() {
        let text = render(&record()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t\tx1\tx2\tW\tWdot");
        assert_eq!(lines.len(), 4);
        assert!(lines[1..].iter().all(|l| l.split('\t').count() == 5));
    }

    #[test]
    fn round_trip_is_bitwise() {
        let rec = record();
        let table = parse_table(&render(&rec).unwrap()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&table.w), bits(&rec.w_samples));
        assert_eq!(bits(&table.w_dot), bits(&rec.w_dot_samples));
        assert_eq!(bits(&table.times), bits(&rec.times));
        for (row, x) in table.states.iter().zip(&rec.states) {
            assert_eq!(bits(row), bits(x.as_slice()));
        }
    }

    #[test]
    fn empty_record_creates_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        let err = export_trajectory(&TrajectoryRecord::default(), &path).unwrap_err();
        assert!(matches!(err, ExportError::EmptyRecord));
        assert!(!path.exists());
    }

    #[test]
    fn record_without_liapunov_samples_is_rejected() {
        let mut rec = record();
        rec.w_samples.clear();
        assert!(matches!(
            render(&rec).unwrap_err(),
            ExportError::MissingLiapunov
        ));
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(parse_table("").is_err());
        assert!(parse_table("t\tx1\tW\tWdot\n1\t2\t3\n").is_err());
        assert!(parse_table("t\tx1\tW\tWdot\n1\t2\tfoo\t4\n").is_err());
    }
}
