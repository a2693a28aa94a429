//! Config file parsing and validation.
//!
//! The format is INI-style sections of `key = value` pairs:
//!
//! ```text
//! # full-line comments start with '#' or ';'
//! [model]
//! kind = cascade
//! beta = 0.5
//!
//! [run]
//! seed = 42
//! ```
//!
//! Unknown keys are errors, never silently ignored; every diagnostic names
//! the offending line and field. Values are scalars, comma-separated lists,
//! or semicolon-separated matrix rows. `--set section.key=value` overlays
//! win over the file.

use std::collections::BTreeMap;

/// A config/usage problem; mapped to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub type CResult<T> = Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> CResult<T> {
    Err(ConfigError(msg.into()))
}

/// Parsed but unvalidated key/value pairs with their source lines.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: Vec<(String, String, String, usize)>, // section, key, value, line
}

impl RawConfig {
    pub fn parse(text: &str) -> CResult<Self> {
        let mut entries = Vec::new();
        let mut section: Option<String> = None;
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        ConfigError(format!("line {line_no}: unterminated section header"))
                    })?
                    .trim();
                if name.is_empty() {
                    return err(format!("line {line_no}: empty section name"));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!(
                    "line {line_no}: expected 'key = value' or a [section] header, got {line:?}"
                ));
            };
            let Some(section) = &section else {
                return err(format!(
                    "line {line_no}: key {:?} appears before any [section] header",
                    key.trim()
                ));
            };
            let key = key.trim();
            if key.is_empty() {
                return err(format!("line {line_no}: empty key"));
            }
            entries.push((
                section.clone(),
                key.to_string(),
                value.trim().to_string(),
                line_no,
            ));
        }
        Ok(Self { entries })
    }

    /// Apply one `section.key=value` override; overrides win over the file.
    pub fn apply_set(&mut self, set: &str) -> CResult<()> {
        let Some((path, value)) = set.split_once('=') else {
            return err(format!("--set {set:?}: expected section.key=value"));
        };
        let Some((section, key)) = path.trim().split_once('.') else {
            return err(format!("--set {set:?}: key path must be section.key"));
        };
        self.entries.push((
            section.trim().to_string(),
            key.trim().to_string(),
            value.trim().to_string(),
            0, // line 0 marks the command line
        ));
        Ok(())
    }
}

fn where_is(line: usize) -> String {
    if line == 0 {
        "command line".to_string()
    } else {
        format!("line {line}")
    }
}

/// Typed, consuming view over a [`RawConfig`]. Every accessor marks its key
/// consumed and records the final (possibly defaulted) value in the
/// normalized echo; [`Fields::finish`] rejects whatever remains.
#[derive(Debug)]
pub struct Fields {
    map: BTreeMap<(String, String), (String, usize)>,
    norm: Vec<(String, String)>,
}

impl Fields {
    pub fn new(raw: RawConfig) -> CResult<Self> {
        let mut map = BTreeMap::new();
        for (section, key, value, line) in raw.entries {
            // Later entries (including --set, which is appended last) win.
            map.insert((section, key), (value, line));
        }
        Ok(Self {
            map,
            norm: Vec::new(),
        })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.map.remove(&(section.to_string(), key.to_string()))
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.map
            .contains_key(&(section.to_string(), key.to_string()))
    }

    fn record(&mut self, section: &str, key: &str, value: impl std::fmt::Display) {
        self.norm
            .push((format!("{section}.{key}"), value.to_string()));
    }

    pub fn str_or(&mut self, section: &str, key: &str, default: &str) -> String {
        let v = self
            .take(section, key)
            .map(|(v, _)| v)
            .unwrap_or_else(|| default.to_string());
        self.record(section, key, &v);
        v
    }

    pub fn str_opt(&mut self, section: &str, key: &str) -> Option<String> {
        let v = self.take(section, key).map(|(v, _)| v);
        if let Some(v) = &v {
            self.record(section, key, v);
        }
        v
    }

    fn parse_one<T: std::str::FromStr>(
        section: &str,
        key: &str,
        value: &str,
        line: usize,
        what: &str,
    ) -> CResult<T> {
        value.parse::<T>().map_err(|_| {
            ConfigError(format!(
                "{}: [{section}] {key}: expected {what}, got {value:?}",
                where_is(line)
            ))
        })
    }

    pub fn f64_req(&mut self, section: &str, key: &str) -> CResult<f64> {
        match self.take(section, key) {
            Some((v, line)) => {
                let x = Self::parse_one(section, key, &v, line, "a number")?;
                self.record(section, key, x);
                Ok(x)
            }
            None => err(format!("[{section}] {key}: required key is missing")),
        }
    }

    pub fn f64_or(&mut self, section: &str, key: &str, default: f64) -> CResult<f64> {
        match self.take(section, key) {
            Some((v, line)) => {
                let x = Self::parse_one(section, key, &v, line, "a number")?;
                self.record(section, key, x);
                Ok(x)
            }
            None => {
                self.record(section, key, default);
                Ok(default)
            }
        }
    }

    pub fn u64_req(&mut self, section: &str, key: &str) -> CResult<u64> {
        match self.take(section, key) {
            Some((v, line)) => {
                let x = Self::parse_one(section, key, &v, line, "a nonnegative integer")?;
                self.record(section, key, x);
                Ok(x)
            }
            None => err(format!("[{section}] {key}: required key is missing")),
        }
    }

    pub fn usize_or(&mut self, section: &str, key: &str, default: usize) -> CResult<usize> {
        match self.take(section, key) {
            Some((v, line)) => {
                let x = Self::parse_one(section, key, &v, line, "a nonnegative integer")?;
                self.record(section, key, x);
                Ok(x)
            }
            None => {
                self.record(section, key, default);
                Ok(default)
            }
        }
    }

    pub fn bool_or(&mut self, section: &str, key: &str, default: bool) -> CResult<bool> {
        match self.take(section, key) {
            Some((v, line)) => {
                let x = match v.as_str() {
                    "true" | "yes" | "on" => true,
                    "false" | "no" | "off" => false,
                    _ => {
                        return err(format!(
                            "{}: [{section}] {key}: expected true or false, got {v:?}",
                            where_is(line)
                        ))
                    }
                };
                self.record(section, key, x);
                Ok(x)
            }
            None => {
                self.record(section, key, default);
                Ok(default)
            }
        }
    }

    /// One of a fixed set of words.
    pub fn enum_or(
        &mut self,
        section: &str,
        key: &str,
        allowed: &[&str],
        default: &str,
    ) -> CResult<String> {
        let (v, line) = match self.take(section, key) {
            Some((v, line)) => (v, line),
            None => (default.to_string(), 0),
        };
        if !allowed.contains(&v.as_str()) {
            return err(format!(
                "{}: [{section}] {key}: expected one of {}, got {v:?}",
                where_is(line),
                allowed.join(" | ")
            ));
        }
        self.record(section, key, &v);
        Ok(v)
    }

    pub fn enum_req(&mut self, section: &str, key: &str, allowed: &[&str]) -> CResult<String> {
        match self.take(section, key) {
            Some((v, line)) => {
                if !allowed.contains(&v.as_str()) {
                    return err(format!(
                        "{}: [{section}] {key}: expected one of {}, got {v:?}",
                        where_is(line),
                        allowed.join(" | ")
                    ));
                }
                self.record(section, key, &v);
                Ok(v)
            }
            None => err(format!(
                "[{section}] {key}: required key is missing (one of {})",
                allowed.join(" | ")
            )),
        }
    }

    pub fn f64_list_req(&mut self, section: &str, key: &str) -> CResult<Vec<f64>> {
        match self.take(section, key) {
            Some((v, line)) => {
                let xs = parse_f64_list(&v).map_err(|bad| {
                    ConfigError(format!(
                        "{}: [{section}] {key}: expected a comma-separated list of numbers, got {bad:?}",
                        where_is(line)
                    ))
                })?;
                self.record(section, key, join_f64(&xs));
                Ok(xs)
            }
            None => err(format!("[{section}] {key}: required key is missing")),
        }
    }

    pub fn f64_list_or(&mut self, section: &str, key: &str, default: &[f64]) -> CResult<Vec<f64>> {
        if self
            .map
            .contains_key(&(section.to_string(), key.to_string()))
        {
            self.f64_list_req(section, key)
        } else {
            self.record(section, key, join_f64(default));
            Ok(default.to_vec())
        }
    }

    pub fn usize_list_req(&mut self, section: &str, key: &str) -> CResult<Vec<usize>> {
        match self.take(section, key) {
            Some((v, line)) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    let part = part.trim();
                    out.push(part.parse::<usize>().map_err(|_| {
                        ConfigError(format!(
                            "{}: [{section}] {key}: expected a comma-separated list of integers, got {part:?}",
                            where_is(line)
                        ))
                    })?);
                }
                self.record(
                    section,
                    key,
                    out.iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                );
                Ok(out)
            }
            None => err(format!("[{section}] {key}: required key is missing")),
        }
    }

    pub fn usize_list_or(
        &mut self,
        section: &str,
        key: &str,
        default: &[usize],
    ) -> CResult<Vec<usize>> {
        if self
            .map
            .contains_key(&(section.to_string(), key.to_string()))
        {
            self.usize_list_req(section, key)
        } else {
            self.record(
                section,
                key,
                default
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            Ok(default.to_vec())
        }
    }

    pub fn usize_list_opt(&mut self, section: &str, key: &str) -> CResult<Option<Vec<usize>>> {
        if self.has(section, key) {
            Ok(Some(self.usize_list_req(section, key)?))
        } else {
            Ok(None)
        }
    }

    /// Semicolon-separated rows of comma-separated numbers.
    pub fn matrix_req(&mut self, section: &str, key: &str) -> CResult<Vec<Vec<f64>>> {
        match self.take(section, key) {
            Some((v, line)) => {
                let mut rows = Vec::new();
                for row in v.split(';') {
                    let xs = parse_f64_list(row).map_err(|bad| {
                        ConfigError(format!(
                            "{}: [{section}] {key}: expected matrix rows like '1,0; 0,1', got {bad:?}",
                            where_is(line)
                        ))
                    })?;
                    rows.push(xs);
                }
                if rows.iter().any(|r| r.len() != rows[0].len()) {
                    return err(format!(
                        "{}: [{section}] {key}: matrix rows have unequal lengths",
                        where_is(line)
                    ));
                }
                self.record(
                    section,
                    key,
                    rows.iter()
                        .map(|r| join_f64(r))
                        .collect::<Vec<_>>()
                        .join("; "),
                );
                Ok(rows)
            }
            None => err(format!("[{section}] {key}: required key is missing")),
        }
    }

    /// Reject every key that no accessor consumed.
    pub fn finish(self) -> CResult<Vec<(String, String)>> {
        if let Some(((section, key), (_, line))) = self.map.into_iter().next() {
            return err(format!(
                "{}: [{section}] {key}: unknown key",
                where_is(line)
            ));
        }
        Ok(self.norm)
    }
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        out.push(part.parse::<f64>().map_err(|_| part.to_string())?);
    }
    if out.is_empty() {
        return Err(text.to_string());
    }
    Ok(out)
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_values() {
        let raw = RawConfig::parse("# hi\n[model]\nkind = cascade\nbeta = 0.5\n[run]\nseed = 7\n")
            .unwrap();
        let mut f = Fields::new(raw).unwrap();
        assert_eq!(f.str_or("model", "kind", "?"), "cascade");
        assert_eq!(f.f64_req("model", "beta").unwrap(), 0.5);
        assert_eq!(f.u64_req("run", "seed").unwrap(), 7);
        f.finish().unwrap();
    }

    #[test]
    fn unknown_key_is_an_error_with_location() {
        let raw = RawConfig::parse("[model]\ngama = 1\n").unwrap();
        let f = Fields::new(raw).unwrap();
        let e = f.finish().unwrap_err();
        assert!(e.0.contains("gama"), "{e}");
        assert!(e.0.contains("line 2"), "{e}");
    }

    #[test]
    fn set_overrides_file_values() {
        let mut raw = RawConfig::parse("[model]\nbeta = 1\n").unwrap();
        raw.apply_set("model.beta=2.5").unwrap();
        let mut f = Fields::new(raw).unwrap();
        assert_eq!(f.f64_req("model", "beta").unwrap(), 2.5);
    }

    #[test]
    fn defaults_are_recorded_in_normalized_echo() {
        let raw = RawConfig::parse("[run]\nseed = 1\n").unwrap();
        let mut f = Fields::new(raw).unwrap();
        let _ = f.u64_req("run", "seed").unwrap();
        let _ = f.usize_or("run", "n_particles", 10_000).unwrap();
        let norm = f.finish().unwrap();
        assert!(norm.contains(&("run.n_particles".to_string(), "10000".to_string())));
    }

    #[test]
    fn matrix_and_list_parsing() {
        let raw = RawConfig::parse("[model]\nk = 1,0; 0,2\ngammas = 1e-2, 1e-3\n").unwrap();
        let mut f = Fields::new(raw).unwrap();
        assert_eq!(
            f.matrix_req("model", "k").unwrap(),
            vec![vec![1.0, 0.0], vec![0.0, 2.0]]
        );
        assert_eq!(f.f64_list_req("model", "gammas").unwrap(), vec![1e-2, 1e-3]);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(RawConfig::parse("loose = 1\n").is_err());
        assert!(RawConfig::parse("[model\n").is_err());
        assert!(RawConfig::parse("[model]\nnot a pair\n").is_err());
    }
}
