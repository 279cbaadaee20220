//! Per-epoch training metrics as a small CSV file.

use crate::error::{CliError, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const HEADER: &str = "epoch,train_loss,train_acc,test_acc,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{}",
            self.epoch, self.train_loss, self.train_acc, self.test_acc, self.wall_ms
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::Data(format!("metrics row has {} fields, expected 5: `{line}`", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| CliError::Data(format!("bad metrics field `{}` in `{line}`", fields[i])))
        };
        Ok(Self {
            epoch: num(0)? as usize,
            train_loss: num(1)?,
            train_acc: num(2)?,
            test_acc: num(3)?,
            wall_ms: num(4)? as u64,
        })
    }

    /// Equality on everything except the wall-clock field.
    pub fn same_modulo_wall(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss == other.train_loss
            && self.train_acc == other.train_acc
            && self.test_acc == other.test_acc
    }
}

/// Append-only metrics file; creating it writes the header line.
pub struct MetricsFile {
    path: PathBuf,
}

impl MetricsFile {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::write(path, format!("{HEADER}\n"))
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn append(&self, row: &MetricsRow) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| CliError::Data(format!("cannot open {}: {e}", self.path.display())))?;
        writeln!(f, "{}", row.to_csv_line())
            .map_err(|e| CliError::Data(format!("cannot append to {}: {e}", self.path.display())))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Read a whole metrics file back, checking the header.
pub fn read(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => {
            return Err(CliError::Data(format!(
                "{}: bad metrics header {:?}, expected `{HEADER}`",
                path.display(),
                other
            )))
        }
    }
    lines.map(MetricsRow::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_epochs_make_a_four_line_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let file = MetricsFile::create(&path).unwrap();
        for epoch in 0..3 {
            file.append(&MetricsRow {
                epoch,
                train_loss: 1.5 - epoch as f64 * 0.3,
                train_acc: 0.5 + epoch as f64 * 0.1,
                test_acc: 0.45 + epoch as f64 * 0.1,
                wall_ms: 12 + epoch as u64,
            })
            .unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("epoch,train_loss,train_acc,test_acc,wall_ms\n"));
        let rows = read(&path).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].epoch, 2);
        assert_eq!(rows[2].wall_ms, 14);
        assert!((rows[1].train_loss - 1.2).abs() < 1e-9);
    }

    #[test]
    fn wall_clock_is_ignored_by_the_modulo_comparison() {
        let a = MetricsRow { epoch: 1, train_loss: 0.5, train_acc: 0.8, test_acc: 0.7, wall_ms: 10 };
        let mut b = a.clone();
        b.wall_ms = 9999;
        assert!(a.same_modulo_wall(&b));
        b.test_acc = 0.71;
        assert!(!a.same_modulo_wall(&b));
    }

    #[test]
    fn bad_headers_and_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "epoch,loss\n1,2\n").unwrap();
        assert!(read(&path).is_err());
        std::fs::write(&path, format!("{HEADER}\n1,2,3\n")).unwrap();
        assert!(read(&path).is_err());
    }
}
