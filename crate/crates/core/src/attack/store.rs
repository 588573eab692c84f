//! On-disk signature store: `signatures/<source>.csv` plus `manifest.json`.

use super::{AttackError, ModelSignature, SignatureSet, SignatureSpec};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Bumped whenever the recursion semantics change.
pub const SIGNATURE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureManifest {
    pub version: u32,
    pub w: usize,
    pub tau: usize,
    pub k: usize,
    pub x0_seed: u64,
    pub dates: Vec<NaiveDate>,
    pub dates_hash: String,
    /// Stored sources in ascending order.
    pub sources: Vec<String>,
    /// Oracle queries issued per source.
    pub queries_per_source: u64,
}

impl SignatureManifest {
    pub fn new(spec: &SignatureSpec, mut sources: Vec<String>) -> Self {
        sources.sort();
        Self {
            version: SIGNATURE_FORMAT_VERSION,
            w: spec.w,
            tau: spec.tau,
            k: spec.k(),
            x0_seed: spec.x0_seed,
            dates: spec.dates.clone(),
            dates_hash: spec.dates_hash(),
            sources,
            queries_per_source: spec.queries_per_oracle(),
        }
    }

    pub fn spec(&self) -> Result<SignatureSpec, AttackError> {
        let spec = SignatureSpec::new(self.w, self.tau, self.dates.clone(), self.x0_seed)?;
        if spec.dates_hash() != self.dates_hash || self.k != spec.k() {
            return Err(AttackError::Spec("manifest date hash does not match its date list".into()));
        }
        Ok(spec)
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> AttackError {
    AttackError::Io(format!("{}: {e}", path.display()))
}

pub fn signature_path(dir: &Path, source: &str) -> PathBuf {
    dir.join("signatures").join(format!("{source}.csv"))
}

/// Writes `date,v0,...,v{w-1}` rows with shortest round-trip floats.
pub fn write_signature_csv(path: &Path, set: &SignatureSet) -> Result<(), AttackError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    let mut header = vec!["date".to_string()];
    header.extend((0..set.w).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(|e| io(path, e))?;
    for row in &set.rows {
        let mut rec = vec![row.date.format("%Y-%m-%d").to_string()];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

pub fn read_signature_csv(path: &Path, source: &str) -> Result<SignatureSet, AttackError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io(path, e))?;
    let width = r.headers().map_err(|e| io(path, e))?.len();
    if width < 3 {
        return Err(io(path, "expected a date column and at least two values"));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io(path, e))?;
        let bad = |what: &str| io(path, format!("row {}: {what}", i + 2));
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| bad("bad date"))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| bad("bad value")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(ModelSignature { date, values });
    }
    Ok(SignatureSet {
        source: source.to_string(),
        w: width - 1,
        rows,
        gaps: Vec::new(),
    })
}

/// Persists every set under `dir` and writes the manifest last.
pub fn save_signature_store(dir: &Path, spec: &SignatureSpec, sets: &[SignatureSet]) -> Result<SignatureManifest, AttackError> {
    for set in sets {
        write_signature_csv(&signature_path(dir, &set.source), set)?;
    }
    let manifest = SignatureManifest::new(spec, sets.iter().map(|s| s.source.clone()).collect());
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| io(&path, e))?;
    Ok(manifest)
}

pub fn load_signature_manifest(dir: &Path) -> Result<SignatureManifest, AttackError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| io(&path, e))
}

/// Loads all sets listed in the manifest, checking each against the spec.
pub fn load_signature_store(dir: &Path) -> Result<(SignatureManifest, Vec<SignatureSet>), AttackError> {
    let manifest = load_signature_manifest(dir)?;
    let spec = manifest.spec()?;
    let mut sets = Vec::with_capacity(manifest.sources.len());
    for source in &manifest.sources {
        let set = read_signature_csv(&signature_path(dir, source), source)?;
        let dates: Vec<NaiveDate> = set.rows.iter().map(|r| r.date).collect();
        if set.w != spec.w || dates != spec.dates {
            return Err(AttackError::Spec(format!("signatures of {source} do not match the manifest")));
        }
        sets.push(set);
    }
    Ok((manifest, sets))
}
