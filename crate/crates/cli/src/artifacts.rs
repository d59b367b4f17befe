//! In-memory artifacts, their on-disk tree and the hashed MANIFEST.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mflab::InequalityReport;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "MANIFEST";

/// The (module, operation, parameters) triple behind a file.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub module: String,
    pub operation: String,
    pub params: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(module: &str, operation: &str) -> Self {
        Provenance {
            module: module.into(),
            operation: operation.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    fn params_field(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }
}

#[derive(Clone, Debug)]
pub struct Artifact {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: Vec<u8>,
    pub provenance: Provenance,
}

impl Artifact {
    pub fn report(id: &str, report: &InequalityReport, module: &str, operation: &str) -> Self {
        let mut provenance = Provenance::new(module, operation);
        provenance.params = report.parameters.clone();
        Artifact {
            path: format!("reports/{}.json", file_stem(id)),
            bytes: (report.to_json() + "\n").into_bytes(),
            provenance,
        }
    }

    pub fn table(name: &str, table: Table, provenance: Provenance) -> Self {
        Artifact {
            path: format!("tables/{}.csv", file_stem(name)),
            bytes: table.to_csv(),
            provenance,
        }
    }

    /// Long-format `series,x,y` data for plotting.
    pub fn plot(name: &str, rows: &[(String, f64, f64)], provenance: Provenance) -> Self {
        let mut t = Table::new(&["series", "x", "y"]);
        for (s, x, y) in rows {
            t.push(vec![s.clone(), num(*x), num(*y)]);
        }
        Artifact {
            path: format!("plots/{}.csv", file_stem(name)),
            bytes: t.to_csv(),
            provenance,
        }
    }
}

/// A CSV table of preformatted cells.
#[derive(Clone, Debug, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Shortest round-trip decimal form, so equal values always print equally.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Lowercase, with every character outside `[a-z0-9._-]` replaced by `-`.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            let c = c.to_ascii_lowercase();
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '-'
            }
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// One MANIFEST entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub sha256: String,
    pub path: String,
    pub bytes: usize,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub config_sha256: String,
    pub suites: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn build(seed: u64, config_text: &str, suites: &[&str], artifacts: &[Artifact]) -> Self {
        let mut entries: Vec<ManifestEntry> = artifacts
            .iter()
            .map(|a| ManifestEntry {
                sha256: sha256_hex(&a.bytes),
                path: a.path.clone(),
                bytes: a.bytes.len(),
                provenance: a.provenance.clone(),
            })
            .collect();
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Manifest {
            seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            suites: suites.iter().map(|s| s.to_string()).collect(),
            entries,
        }
    }

    /// Header lines, then `sha256  bytes  path  module::operation  params` per file.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# mflab manifest v1");
        let _ = writeln!(s, "# seed {}", self.seed);
        let _ = writeln!(s, "# config_sha256 {}", self.config_sha256);
        let _ = writeln!(s, "# suites {}", if self.suites.is_empty() { "-".into() } else { self.suites.join(",") });
        let _ = writeln!(s, "# files {}", self.entries.len());
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}  {}  {}  {}::{}  {}",
                e.sha256,
                e.bytes,
                e.path,
                e.provenance.module,
                e.provenance.operation,
                e.provenance.params_field()
            );
        }
        s
    }

    /// `(path, sha256)` pairs of a rendered MANIFEST.
    pub fn parse_hashes(text: &str) -> Vec<(String, String)> {
        text.lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .filter_map(|l| {
                let mut parts = l.split("  ");
                let hash = parts.next()?;
                let _bytes = parts.next()?;
                let path = parts.next()?;
                Some((path.to_string(), hash.to_string()))
            })
            .collect()
    }
}

/// Writes every artifact below `dir` and then the MANIFEST.
pub fn write_tree(dir: &Path, artifacts: &[Artifact], manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for a in artifacts {
        let path = dir.join(&a.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, &a.bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.render()).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn stems_are_filesystem_safe() {
        assert_eq!(file_stem("saw I1 d=2/lambda=0.5"), "saw-i1-d-2-lambda-0.5");
    }

    #[test]
    fn manifest_is_sorted_and_parses_back() {
        let a = |p: &str, b: &[u8]| Artifact {
            path: p.into(),
            bytes: b.to_vec(),
            provenance: Provenance::new("m", "op").with("k", 1),
        };
        let arts = vec![a("tables/b.csv", b"2"), a("reports/a.json", b"1")];
        let m = Manifest::build(7, "schema = 1", &["saw"], &arts);
        let text = m.render();
        let hashes = Manifest::parse_hashes(&text);
        assert_eq!(hashes[0].0, "reports/a.json");
        assert_eq!(hashes[1], ("tables/b.csv".to_string(), sha256_hex(b"2")));
        assert!(text.contains("# files 2"));
        assert!(text.contains("m::op  k=1"));
    }

    #[test]
    fn csv_quotes_cells_with_commas() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), num(0.1)]);
        assert_eq!(String::from_utf8(t.to_csv()).unwrap(), "a,b\n\"x,y\",0.1\n");
    }
}
