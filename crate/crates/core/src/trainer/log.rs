use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::StepLosses;
use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "iter,lr,j_recon,j_t1,j_t2,j_adv,wall_ms";

/// One line of the training log. Floats are written in shortest
/// round-trip form, so parsing a row recovers the exact values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub losses: StepLosses,
    pub wall_ms: u64,
}

impl LogRow {
    fn format(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{}",
            l.iter, l.lr, l.j_recon, l.j_t1, l.j_t2, l.j_adv, self.wall_ms
        )
    }

    fn parse(line: &str, line_no: usize) -> Result<Self> {
        let err = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", fields.len())));
        }
        let float = |i: usize| fields[i].parse::<f64>().map_err(|e| err(format!("field {i}: {e}")));
        Ok(Self {
            losses: StepLosses {
                iter: fields[0].parse().map_err(|e| err(format!("iter: {e}")))?,
                lr: float(1)?,
                j_recon: float(2)?,
                j_t1: float(3)?,
                j_t2: float(4)?,
                j_adv: float(5)?,
            },
            wall_ms: fields[6].parse().map_err(|e| err(format!("wall_ms: {e}")))?,
        })
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != LOG_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unexpected header `{line}`"),
                });
            }
            continue;
        }
        if !line.is_empty() {
            rows.push(LogRow::parse(&line, i + 1)?);
        }
    }
    Ok(rows)
}

pub(crate) struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub(crate) fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{LOG_HEADER}")?;
        Ok(Self { out })
    }

    /// Reopens an existing log for a run resumed after `iteration`, dropping
    /// rows from steps that the checkpoint does not include.
    pub(crate) fn resume(path: &Path, iteration: u64) -> Result<Self> {
        let kept: Vec<LogRow> = if path.exists() {
            read_log(path)?
                .into_iter()
                .filter(|r| r.losses.iter <= iteration)
                .collect()
        } else {
            Vec::new()
        };
        let mut writer = Self::create(path)?;
        for row in &kept {
            writer.append(row)?;
        }
        Ok(writer)
    }

    pub(crate) fn append(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.out, "{}", row.format())?;
        Ok(())
    }

    pub(crate) fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iter: u64, x: f64) -> LogRow {
        LogRow {
            losses: StepLosses {
                iter,
                lr: 1e-4,
                j_recon: x,
                j_t1: 0.0,
                j_t2: 1.0 / 3.0,
                j_adv: f64::MIN_POSITIVE,
            },
            wall_ms: 12,
        }
    }

    #[test]
    fn rows_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut w = LogWriter::create(&path).unwrap();
        let rows: Vec<LogRow> = (1..=5).map(|i| row(i, 0.1 * i as f64 + 1e-17)).collect();
        for r in &rows {
            w.append(r).unwrap();
        }
        w.flush().unwrap();
        assert_eq!(read_log(&path).unwrap(), rows);
    }

    #[test]
    fn resume_truncates_later_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut w = LogWriter::create(&path).unwrap();
        for i in 1..=8 {
            w.append(&row(i, i as f64)).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let mut w = LogWriter::resume(&path, 5).unwrap();
        w.append(&row(6, 60.0)).unwrap();
        w.flush().unwrap();
        let iters: Vec<u64> = read_log(&path).unwrap().iter().map(|r| r.losses.iter).collect();
        assert_eq!(iters, [1, 2, 3, 4, 5, 6]);
        assert_eq!(read_log(&path).unwrap()[5].losses.j_recon, 60.0);
    }
}
