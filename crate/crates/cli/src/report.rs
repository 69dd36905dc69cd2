//! Run reports: `report.txt` for people, `report.kv` (one `key=value` per
//! line) for scripts.

use std::fmt::Display;
use std::fs;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Report {
    entries: Vec<(String, String)>,
    notes: Vec<String>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Free text that goes to `report.txt` only.
    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            // values never span lines in the kv file
            s.push_str(&format!("{k}={}\n", v.replace('\n', " ")));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(&format!("{k:<width$}  {v}\n"));
        }
        if !self.notes.is_empty() {
            s.push('\n');
            for n in &self.notes {
                s.push_str(n);
                s.push('\n');
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::write(dir.join("report.kv"), self.to_kv())?;
        fs::write(dir.join("report.txt"), self.to_text())
    }
}

/// Parse a `report.kv` file back into pairs.
pub fn parse_kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut r = Report::new();
        r.set("a", 1.5);
        r.set("b", "two\nlines");
        let parsed = parse_kv(&r.to_kv());
        assert_eq!(parsed[0], ("a".into(), "1.5".into()));
        assert_eq!(parsed[1].1, "two lines");
        assert_eq!(r.get("a"), Some("1.5"));
    }
}
