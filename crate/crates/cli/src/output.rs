//! CSV tables with commented headers, and JSON summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::Config;

/// Full round-trip rendering: 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct Table {
    text: String,
}

impl Table {
    /// Starts a table whose header echoes the command and resolved config.
    /// `units` describes each column.
    pub fn new<N: AsRef<str>, U: AsRef<str>>(
        command: &str,
        config: &Config,
        columns: &[(N, U)],
    ) -> Self {
        let mut text = format!("# polylab {command} {}\n", env!("CARGO_PKG_VERSION"));
        text.push_str("# resolved config:\n");
        for line in config.to_toml().lines() {
            if line.is_empty() {
                text.push_str("#\n");
            } else {
                let _ = writeln!(text, "#   {line}");
            }
        }
        text.push_str("# columns:\n");
        for (name, unit) in columns {
            let _ = writeln!(text, "#   {}: {}", name.as_ref(), unit.as_ref());
        }
        let names: Vec<&str> = columns.iter().map(|c| c.0.as_ref()).collect();
        let _ = writeln!(text, "{}", names.join(","));
        Table { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        fs::write(path, &self.text).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    command: &'a str,
    config: &'a Config,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_summary<T: Serialize>(
    path: &Path,
    command: &str,
    config: &Config,
    body: &T,
) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(&Summary {
        command,
        config,
        body,
    })?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn prepare(dir: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

/// Column names `prefix_1 … prefix_n`.
pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}_{k}")).collect()
}
