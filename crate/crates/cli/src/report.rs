//! Output-directory plumbing. Every run directory carries the resolved
//! config, the library and binary versions, and CSV files with a schema
//! header row; nothing in here writes wall-clock state, so equal inputs
//! produce equal bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Resolved;
use crate::outcome::Failure;

pub const CLI_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Creates the run directory and drops the provenance files into it.
pub fn prepare_dir(resolved: &Resolved) -> Result<(), Failure> {
    fs::create_dir_all(&resolved.out_dir)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", resolved.out_dir.display())))?;
    let config_text = toml::to_string_pretty(&resolved.config)
        .map_err(|e| Failure::usage(format!("cannot serialize resolved config: {e}")))?;
    write_text(&resolved.out_dir.join("resolved.toml"), &config_text)?;
    write_text(
        &resolved.out_dir.join("version.txt"),
        &format!("curvspec {}\ncurvspec-cli {}\n", curvspec::VERSION, CLI_VERSION),
    )?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::usage(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// A CSV table under construction; the header is fixed first so every file
/// starts with its schema row.
pub struct Csv {
    path: PathBuf,
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(path: PathBuf, header: &[&str]) -> Self {
        Csv {
            path,
            text: format!("{}\n", header.join(",")),
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        debug_assert_eq!(fields.len(), self.columns, "row width must match the header");
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> Result<(), Failure> {
        write_text(&self.path, &self.text)
    }
}

/// Full-precision float formatting shared by all tables.
pub fn num(v: f64) -> String {
    format!("{v:.17e}")
}
