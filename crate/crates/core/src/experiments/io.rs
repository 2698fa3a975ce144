//! Flat-file output for experiment runs: CSV tables, JSON summaries, and
//! the run manifest.
//!
//! Every run directory follows the same discipline.  The manifest is
//! written first, before any result file exists, so a crashed or
//! interrupted run is recognizable by its empty `outputs` map.  After all
//! results are on disk the manifest is rewritten with a SHA-256 checksum
//! per output file.  CSV content depends only on the configuration and
//! seed, never on wall time or thread count, so re-running a configuration
//! reproduces every result file byte for byte; the manifest itself carries
//! the timestamp and is the one file excluded from that guarantee.
//!
//! Floats are printed with `{:.16e}` (17 significant digits), enough to
//! round-trip an f64 exactly.  Tables are RFC 4180: comma separated, LF
//! line endings, header row first, fields quoted only when they contain a
//! comma, quote, or line break.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::scalar::Scalar;

/// One float, formatted so that parsing it back recovers the exact bits.
pub fn format_float<F: Scalar>(v: F) -> String {
    format!("{:.16e}", v)
}

/// RFC 4180 field escaping: quote only when the content requires it.
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        let mut out = String::with_capacity(s.len() + 2);
        out.push('"');
        for c in s.chars() {
            if c == '"' {
                out.push('"');
            }
            out.push(c);
        }
        out.push('"');
        out
    } else {
        s.to_string()
    }
}

/// Writes a complete CSV file: header, then rows, LF endings, trailing
/// newline.  Field counts must match the header; that is a caller bug.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = String::new();
    buf.push_str(&header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(","));
    buf.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "row width differs from header");
        buf.push_str(&row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        buf.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(buf.as_bytes())?;
    Ok(())
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let mut file = fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

/// Provenance record for one run directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    /// Directory name of the experiment this run belongs to.
    pub experiment: String,
    /// Wall-clock creation time, RFC 3339.  Informational only; results do
    /// not depend on it.
    pub created_utc: String,
    /// Version of the library that produced the run.
    pub code_version: String,
    /// Generator family behind every random draw, with the crate that
    /// implements it.
    pub rng: String,
    /// Full configuration echo: model, simulation parameters, and the
    /// experiment's own knobs, exactly as resolved.
    pub config: serde_json::Value,
    /// File name to hex SHA-256, filled in when the run finalizes.  Empty
    /// means the run never completed.
    pub outputs: BTreeMap<String, String>,
}

/// Creates a run directory, maintains its manifest, and tracks which
/// result files were written so they can be checksummed at the end.
///
/// Call order: [`RunWriter::create`] (writes the manifest with an empty
/// `outputs` map), any number of [`RunWriter::csv`] / [`RunWriter::summary`]
/// calls, then [`RunWriter::finalize`] to seal the manifest.
pub struct RunWriter {
    dir: PathBuf,
    manifest: RunManifest,
    written: Vec<String>,
}

impl RunWriter {
    /// Creates `<root>/<experiment>/` and writes the initial manifest.
    pub fn create(root: &Path, experiment: &str, config: serde_json::Value) -> Result<Self> {
        let dir = root.join(experiment);
        fs::create_dir_all(&dir)?;
        let manifest = RunManifest {
            experiment: experiment.to_string(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            rng: format!("{} (rand_chacha 0.3)", crate::simulator::RNG_NAME),
            config,
            outputs: BTreeMap::new(),
        };
        write_json_pretty(&dir.join("manifest.json"), &manifest)?;
        Ok(RunWriter {
            dir,
            manifest,
            written: Vec::new(),
        })
    }

    /// The run directory this writer owns.
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes one CSV result file into the run directory.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        write_csv(&self.dir.join(name), header, rows)?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes `summary.json` into the run directory.
    pub fn summary<T: Serialize>(&mut self, value: &T) -> Result<()> {
        write_json_pretty(&self.dir.join("summary.json"), value)?;
        self.written.push("summary.json".to_string());
        Ok(())
    }

    /// Checksums every written file and rewrites the manifest with the
    /// completed `outputs` map.
    pub fn finalize(mut self) -> Result<RunManifest> {
        for name in &self.written {
            let digest = sha256_hex(&self.dir.join(name))?;
            self.manifest.outputs.insert(name.clone(), digest);
        }
        write_json_pretty(&self.dir.join("manifest.json"), &self.manifest)?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scratch(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "atlaslab-io-{}-{}",
            tag,
            std::process::id()
        ));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn float_format_round_trips_exactly() {
        for &v in &[
            0.5f64,
            std::f64::consts::PI,
            -1.2345678901234567e-8,
            6.02214076e23,
            1.0 / 3.0,
        ] {
            let text = format_float(v);
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{text}");
        }
    }

    #[test]
    fn csv_quoting_follows_rfc_4180() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
        assert_eq!(csv_field("two\nlines"), "\"two\nlines\"");
    }

    #[test]
    fn manifest_precedes_results_and_seals_checksums() {
        let root = scratch("manifest");
        let mut writer =
            RunWriter::create(&root, "demo", serde_json::json!({"k": 1})).unwrap();

        let manifest_path = writer.dir().join("manifest.json");
        assert!(manifest_path.exists(), "manifest must exist before results");
        let early: RunManifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        assert!(early.outputs.is_empty());

        writer
            .csv(
                "table.csv",
                &["a", "b"],
                &[vec!["1".into(), format_float(0.5f64)]],
            )
            .unwrap();
        let sealed = writer.finalize().unwrap();

        let expected = sha256_hex(&root.join("demo/table.csv")).unwrap();
        assert_eq!(sealed.outputs.get("table.csv"), Some(&expected));
        let late: RunManifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        assert_eq!(late.outputs.get("table.csv"), Some(&expected));
        assert_eq!(late.rng, format!("chacha12 (rand_chacha 0.3)"));

        let text = fs::read_to_string(root.join("demo/table.csv")).unwrap();
        assert_eq!(text, "a,b\n1,5.0000000000000000e-1\n");

        fs::remove_dir_all(&root).unwrap();
    }
}
