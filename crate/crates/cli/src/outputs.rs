//! Output-file helpers. All numeric CSV cells use full precision so reruns
//! are byte-comparable.

use std::path::Path;

use quirt::data::fmt_full;

use crate::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Minimal CSV building: header plus rows of preformatted cells.
pub struct Csv {
    buffer: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buffer = header.join(",");
        buffer.push('\n');
        Self { buffer }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buffer.push_str(&cells.join(","));
        self.buffer.push('\n');
    }

    pub fn write(self, path: &Path) -> Result<(), CliError> {
        write_file(path, &self.buffer)
    }
}

pub fn num(x: f64) -> String {
    fmt_full(x)
}

pub fn opt_num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => fmt_full(v),
        _ => "NA".to_string(),
    }
}
