//! The `run.txt` manifest written next to every run's outputs.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

pub const MANIFEST_NAME: &str = "run.txt";

/// Fully resolved invocation: global flags, subcommand and every option with its
/// effective value, defaults included.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    global: Vec<(String, String)>,
    subcommand: String,
    options: Vec<(String, Option<String>)>,
}

impl Manifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            ..Default::default()
        }
    }

    pub fn global(mut self, flag: &str, value: impl ToString) -> Self {
        self.global.push((flag.to_string(), value.to_string()));
        self
    }

    pub fn opt(&mut self, flag: &str, value: impl ToString) -> &mut Self {
        self.options
            .push((flag.to_string(), Some(value.to_string())));
        self
    }

    /// A boolean switch; emitted on the command line only when set.
    pub fn switch(&mut self, flag: &str, on: bool) -> &mut Self {
        if on {
            self.options.push((flag.to_string(), None));
        }
        self
    }

    fn quote(s: &str) -> String {
        if !s.is_empty()
            && s.chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_./:=+,".contains(c))
        {
            s.to_string()
        } else {
            format!("'{}'", s.replace('\'', r"'\''"))
        }
    }

    /// The equivalent command line.
    pub fn command_line(&self) -> String {
        let mut parts = vec!["jointfuse".to_string()];
        for (flag, value) in &self.global {
            parts.push(format!("--{flag}"));
            parts.push(Self::quote(value));
        }
        parts.push(self.subcommand.clone());
        for (flag, value) in &self.options {
            parts.push(format!("--{flag}"));
            if let Some(v) = value {
                parts.push(Self::quote(v));
            }
        }
        parts.join(" ")
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "command = {}", self.command_line()).unwrap();
        for (flag, value) in &self.global {
            writeln!(out, "{flag} = {value}").unwrap();
        }
        writeln!(out, "subcommand = {}", self.subcommand).unwrap();
        for (flag, value) in &self.options {
            writeln!(out, "{flag} = {}", value.as_deref().unwrap_or("true")).unwrap();
        }
        out
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::write(dir.join(MANIFEST_NAME), self.render())
    }
}
