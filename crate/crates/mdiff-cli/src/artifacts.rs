//! Shared artifact plumbing: JSON documents and loss CSVs.
//!
//! Every file this module writes carries provenance — JSON artifacts embed
//! a `run` object (build id plus resolved config), CSVs start with `#`
//! comment lines holding the same information. Loss CSVs are append-safe so
//! a resumed training run extends the existing log instead of clobbering it.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use mdiff_core::{Error, Result};

/// Writes a pretty-printed JSON document, creating parent directories.
pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON document back.
pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// An append-friendly CSV log. On first use the file gets `# build:` and
/// `# config:` comment lines plus the header row; later appends add data
/// rows only, so interrupted runs keep one continuous log.
pub struct CsvLog {
    file: fs::File,
}

impl CsvLog {
    pub fn open(path: &Path, header: &str, provenance: &serde_json::Value) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let fresh = !path.exists();
        let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "# build: {}", provenance["build"].as_str().unwrap_or("unknown"))?;
            writeln!(file, "# config: {}", serde_json::to_string(&provenance["config"])?)?;
            writeln!(file, "{header}")?;
        }
        Ok(CsvLog { file })
    }

    pub fn row(&mut self, fields: std::fmt::Arguments<'_>) -> Result<()> {
        writeln!(self.file, "{fields}")?;
        Ok(())
    }
}

/// Quotes one CSV field: wraps it in double quotes with inner quotes
/// doubled, so fields holding JSON or error text stay one column.
pub fn csv_quote(field: &str) -> String {
    format!("\"{}\"", field.replace('"', "\"\""))
}

/// Parses a loss CSV back into `(step, loss)` pairs, skipping `#` comments
/// and the header. Used by tests and the report renderer.
pub fn read_loss_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("step") || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let mut parts = line.split(',');
        let step_text = parts.next().ok_or_else(|| bad("expected step,loss".into()))?;
        let loss_text = parts.next().ok_or_else(|| bad("expected step,loss".into()))?;
        let step = step_text.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?;
        let loss = loss_text.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?;
        rows.push((step, loss));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_log_writes_header_once_and_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let prov = serde_json::json!({"build": "test-1", "config": {"a": 1}});
        {
            let mut log = CsvLog::open(&path, "step,loss", &prov).unwrap();
            log.row(format_args!("1,0.5")).unwrap();
        }
        {
            let mut log = CsvLog::open(&path, "step,loss", &prov).unwrap();
            log.row(format_args!("2,0.25")).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("# build: test-1").count(), 1);
        assert_eq!(text.matches("step,loss").count(), 1);
        let rows = read_loss_csv(&path).unwrap();
        assert_eq!(rows, vec![(1, 0.5), (2, 0.25)]);
    }

    #[test]
    fn bad_csv_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        std::fs::write(&path, "step,loss\n1,abc\n").unwrap();
        let err = read_loss_csv(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
