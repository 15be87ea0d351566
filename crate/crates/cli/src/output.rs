//! Result files. Every file is written to a temporary sibling and renamed
//! into place, so a file is either complete or absent.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub struct OutputDir {
    dir: PathBuf,
    header: String,
}

impl OutputDir {
    pub fn create(dir: &Path, config_hash: &str, seed: u64) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            header: format!("config_hash={config_hash} seed={seed}"),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// `# <header>` followed by the column row and `rows`.
    pub fn write_csv(&self, name: &str, columns: &[&str], rows: &[String]) -> Result<PathBuf, CliError> {
        let mut text = String::with_capacity(64 * (rows.len() + 2));
        writeln!(text, "# {}", self.header).unwrap();
        writeln!(text, "{}", columns.join(",")).unwrap();
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        self.write_atomic(name, text.as_bytes())
    }

    /// JSON document; the header goes in a top-level `header` field.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut doc = serde_json::to_value(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        if let Some(obj) = doc.as_object_mut() {
            obj.insert("header".into(), serde_json::Value::String(self.header.clone()));
        }
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.write_atomic(name, text.as_bytes())
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        tmp.write_all(bytes).map_err(|e| CliError::io(&target, e))?;
        tmp.as_file().sync_all().map_err(|e| CliError::io(&target, e))?;
        tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
        Ok(target)
    }
}

/// Joins already-formatted cells with commas.
pub fn row<S: AsRef<str>>(cells: &[S]) -> String {
    let mut out = String::new();
    for (k, c) in cells.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(c.as_ref());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5, 0.0, 123456789.125] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1.0), "1.0");
    }

    #[test]
    fn csv_has_header_and_no_leftovers() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path(), "abc", 7).unwrap();
        out.write_csv("x.csv", &["a", "b"], &[row(&["1", "2"])]).unwrap();
        out.write_csv("x.csv", &["a", "b"], &[row(&["3", "4"])]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("x.csv")).unwrap();
        assert_eq!(text, "# config_hash=abc seed=7\na,b\n3,4\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
