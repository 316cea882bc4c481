//! Result tables: CSV bodies preceded by `# key = value` metadata lines.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kv::KvMap;

/// Standard metadata block for a result file.
pub fn metadata(kind: &str, seed: u64) -> KvMap {
    let mut kv = KvMap::new();
    kv.set("kind", kind);
    kv.set("seed", seed);
    kv.set("version", env!("CARGO_PKG_VERSION"));
    kv
}

/// Hex SHA-256 of the canonical `key = value` rendering of a config.
pub fn config_digest(config: &KvMap) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row. Panics if its width differs from the header.
    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format("result csv", format!("no column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[idx].as_str()).collect())
    }

    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .map(|v| {
                v.parse().map_err(|_| {
                    Error::format("result csv", format!("bad number `{v}` in `{name}`"))
                })
            })
            .collect()
    }

    /// Renders metadata comment lines followed by the CSV body.
    pub fn render(&self, meta: &KvMap) -> Result<String> {
        let mut out = String::new();
        for (k, v) in meta.iter() {
            writeln!(out, "# {k} = {v}").expect("writing to a String");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let body = w
            .into_inner()
            .map_err(|e| Error::format("result csv", e.to_string()))?;
        out.push_str(&String::from_utf8(body).expect("csv of UTF-8 fields"));
        Ok(out)
    }

    pub fn write(&self, path: &Path, meta: &KvMap) -> Result<()> {
        std::fs::write(path, self.render(meta)?).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_result_csv(text: &str) -> Result<(KvMap, CsvTable)> {
    let mut meta_text = String::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix('#') {
            Some(rest) if body.is_empty() => {
                meta_text.push_str(rest.trim());
                meta_text.push('\n');
            }
            _ => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let meta = KvMap::parse(&meta_text)?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut table = CsvTable {
        header,
        rows: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec?;
        table.rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((meta, table))
}

pub fn read_result_csv(path: &Path) -> Result<(KvMap, CsvTable)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_result_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        let mut meta = metadata("unit", 9);
        meta.set_f64("tau", 0.07);
        let text = t.render(&meta).unwrap();
        assert!(text.starts_with("# kind = unit\n# seed = 9\n"));
        let (m2, t2) = parse_result_csv(&text).unwrap();
        assert_eq!(m2, meta);
        assert_eq!(t2, t);
        assert_eq!(t2.column_f64("a").unwrap(), vec![1.0]);
        assert!(t2.column("c").is_err());
    }

    #[test]
    fn digest_is_stable_hex() {
        let mut kv = KvMap::new();
        kv.set("seed", 1);
        let d = config_digest(&kv);
        assert_eq!(d.len(), 64);
        assert_eq!(d, config_digest(&kv));
        kv.set("seed", 2);
        assert_ne!(d, config_digest(&kv));
    }
}
