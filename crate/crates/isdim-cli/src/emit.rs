//! Result emission: CSV with RFC-4180 quoting or a JSON mirror of the same
//! rows, written atomically (temp file + rename) with the normalized config
//! embedded at the top.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

/// A single cell. Non-finite floats never serialize as numbers; divergence
/// verdicts travel as the string `"inf"` in their own column.
#[derive(Debug, Clone)]
pub enum Value {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    /// Rendered as the empty field in CSV and `null` in JSON.
    Empty,
}

impl Value {
    fn csv_field(&self) -> String {
        match self {
            Value::Str(s) => csv_quote(s),
            Value::Int(i) => i.to_string(),
            Value::Float(x) => float_repr(*x),
            Value::Bool(b) => b.to_string(),
            Value::Empty => String::new(),
        }
    }

    fn json_value(&self) -> String {
        match self {
            Value::Str(s) => json_quote(s),
            Value::Int(i) => i.to_string(),
            Value::Float(x) => {
                if x.is_finite() {
                    float_repr(*x)
                } else {
                    json_quote(&float_repr(*x))
                }
            }
            Value::Bool(b) => b.to_string(),
            Value::Empty => "null".to_string(),
        }
    }
}

fn float_repr(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        // Shortest round-trip representation; deterministic.
        format!("{x}")
    }
}

fn csv_quote(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn json_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// A finished result set: fixed column names and uniform rows.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    /// One-line human summary of a row, for the progress stream.
    pub fn summary_line(&self, i: usize) -> String {
        let mut parts = Vec::with_capacity(self.columns.len());
        for (c, v) in self.columns.iter().zip(&self.rows[i]) {
            let text = v.csv_field();
            if !text.is_empty() {
                parts.push(format!("{c}={text}"));
            }
        }
        parts.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Everything that precedes the rows: version, command, the normalized
/// config, and an optional timestamp.
#[derive(Debug, Clone)]
pub struct Preamble {
    pub version: &'static str,
    pub command: String,
    /// `section.key = value` pairs, fully materialized with defaults.
    pub config: Vec<(String, String)>,
    /// `None` when the run suppresses the timestamp line for byte-stable
    /// output.
    pub timestamp: Option<String>,
}

pub fn render(preamble: &Preamble, table: &Table, format: Format) -> String {
    match format {
        Format::Csv => render_csv(preamble, table),
        Format::Json => render_json(preamble, table),
    }
}

fn render_csv(preamble: &Preamble, table: &Table) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# isdim_version = {}", preamble.version);
    if let Some(ts) = &preamble.timestamp {
        let _ = writeln!(out, "# generated_at = {ts}");
    }
    let _ = writeln!(out, "# command = {}", preamble.command);
    for (k, v) in &preamble.config {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let _ = writeln!(out, "{}", table.columns.join(","));
    for row in &table.rows {
        let fields: Vec<String> = row.iter().map(Value::csv_field).collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

fn render_json(preamble: &Preamble, table: &Table) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(
        out,
        "  \"isdim_version\": {},",
        json_quote(preamble.version)
    );
    if let Some(ts) = &preamble.timestamp {
        let _ = writeln!(out, "  \"generated_at\": {},", json_quote(ts));
    }
    let _ = writeln!(out, "  \"command\": {},", json_quote(&preamble.command));
    out.push_str("  \"config\": {\n");
    for (i, (k, v)) in preamble.config.iter().enumerate() {
        let comma = if i + 1 < preamble.config.len() {
            ","
        } else {
            ""
        };
        let _ = writeln!(out, "    {}: {}{comma}", json_quote(k), json_quote(v));
    }
    out.push_str("  },\n");
    out.push_str("  \"rows\": [\n");
    for (i, row) in table.rows.iter().enumerate() {
        let fields: Vec<String> = table
            .columns
            .iter()
            .zip(row)
            .map(|(c, v)| format!("{}: {}", json_quote(c), v.json_value()))
            .collect();
        let comma = if i + 1 < table.rows.len() { "," } else { "" };
        let _ = writeln!(out, "    {{{}}}{comma}", fields.join(", "));
    }
    out.push_str("  ]\n}\n");
    out
}

/// Write `content` to `path`, atomically for real files; `-` streams to
/// standard output.
pub fn write_output(path: &str, content: &str) -> io::Result<()> {
    if path == "-" {
        io::stdout().write_all(content.as_bytes())?;
        return Ok(());
    }
    let target = Path::new(path);
    let dir = target.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp-{}",
            target
                .file_name()
                .map(|f| f.to_string_lossy())
                .unwrap_or_default(),
            std::process::id()
        )),
        None => Path::new(&format!(".{path}.tmp-{}", std::process::id())).to_path_buf(),
    };
    fs::write(&tmp, content)?;
    fs::rename(&tmp, target)?;
    Ok(())
}
