//! JSON reports and CSV tables.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Value};

use crate::config::sha256_hex;
use crate::CliError;

/// Floats as `d.dddddddddddddddde±x` (17 significant digits); everything else pretty.
struct SeventeenDigits<'a>(PrettyFormatter<'a>);

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for SeventeenDigits<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_float(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate! {
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SeventeenDigits(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory serialization");
    String::from_utf8(out).expect("JSON is UTF-8")
}

/// A report body plus the run's wall-clock timings, kept apart so the body is
/// reproducible.
pub struct Report {
    pub verb: &'static str,
    /// `None` when no config file was read.
    pub config_hash: Option<String>,
    pub master_seed: u64,
    pub body: Value,
    pub timing: Value,
}

impl Report {
    /// The serialized report. Every line before `"timing"` depends only on config
    /// and seed; `content_hash` covers exactly those fields.
    pub fn render(&self) -> String {
        let content = json!({
            "tool": "devcert",
            "library_version": devcert::VERSION,
            "verb": self.verb,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "result": self.body,
        });
        let hash = sha256_hex(to_json(&content).as_bytes());
        let mut full = content;
        let map = full.as_object_mut().expect("object");
        map.insert("content_hash".into(), Value::String(hash));
        map.insert("timing".into(), self.timing.clone());
        let mut s = to_json(&full);
        s.push('\n');
        s
    }
}

/// The part of a rendered report preceding its timing block.
pub fn without_timing(rendered: &str) -> &str {
    rendered.find("\n  \"timing\"").map_or(rendered, |i| &rendered[..i])
}

/// Creates `dir` and writes each `(name, contents)` file into it.
pub fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    files
        .iter()
        .map(|(name, contents)| {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Ok(path)
        })
        .collect()
}

/// One CSV cell per value, floats with 17 significant digits.
pub enum Cell {
    Text(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_finite() => format_float(*x),
            Cell::Float(x) => x.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }
}

pub fn to_csv(header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory CSV");
    for row in rows {
        w.write_record(row.iter().map(Cell::render)).expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
}
