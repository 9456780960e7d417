//! On-disk datasets: a JSONL manifest listing frame pairs, with image paths
//! resolved relative to the manifest's directory.

use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{self, Image2D, RigidTransform2D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformParams {
    pub tx: f64,
    pub ty: f64,
    pub theta_deg: f64,
}

impl From<RigidTransform2D> for TransformParams {
    fn from(t: RigidTransform2D) -> Self {
        TransformParams { tx: t.tx, ty: t.ty, theta_deg: t.theta_deg }
    }
}

impl From<TransformParams> for RigidTransform2D {
    fn from(p: TransformParams) -> Self {
        RigidTransform2D { tx: p.tx, ty: p.ty, theta_deg: p.theta_deg }
    }
}

/// One line of a manifest. `fixed` and `moving` are file paths relative to
/// the manifest location; `truth` is the misalignment applied to the moving
/// frame when it is known (synthetic data), absent otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub pair_id: String,
    pub fixed: String,
    pub moving: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TransformParams>,
}

#[derive(Clone, Debug)]
pub struct LoadedPair {
    pub pair_id: String,
    pub fixed: Image2D,
    pub moving: Image2D,
    pub truth: Option<RigidTransform2D>,
}

pub fn write_manifest(path: &Path, records: &[PairRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::Data(format!("cannot serialize pair {}: {}", rec.pair_id, e)))?;
        writeln!(f, "{}", line)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("manifest line {}: {}", i + 1, e)))?;
        if !seen.insert(rec.pair_id.clone()) {
            return Err(Error::Format(format!(
                "manifest line {}: duplicate pair_id {:?}",
                i + 1,
                rec.pair_id
            )));
        }
        records.push(rec);
    }
    Ok(records)
}

/// Loads one record's images, resolving paths against `manifest_dir`.
/// The two frames of a pair must agree in shape.
pub fn load_pair(manifest_dir: &Path, rec: &PairRecord) -> Result<LoadedPair> {
    let fixed = imgcore::read_image(&manifest_dir.join(&rec.fixed))?;
    let moving = imgcore::read_image(&manifest_dir.join(&rec.moving))?;
    if fixed.height() != moving.height() || fixed.width() != moving.width() {
        return Err(Error::Dimension(format!(
            "pair {:?}: fixed is {}x{}, moving is {}x{}",
            rec.pair_id,
            fixed.height(),
            fixed.width(),
            moving.height(),
            moving.width()
        )));
    }
    Ok(LoadedPair {
        pair_id: rec.pair_id.clone(),
        fixed,
        moving,
        truth: rec.truth.map(Into::into),
    })
}

/// Reads a manifest and loads every pair it lists.
pub fn load_all(manifest_path: &Path) -> Result<Vec<LoadedPair>> {
    let records = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    records.iter().map(|rec| load_pair(dir, rec)).collect()
}
