//! CSV manifest datasets: `id,path,class_name` rows next to PGM files.

use super::{read_pgm, write_pgm, Dataset, ImageSample};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::gbt::FeatureMatrix;
use std::collections::BTreeSet;
use std::path::Path;

pub const MANIFEST_NAME: &str = "manifest.csv";
const HEADER: [&str; 3] = ["id", "path", "class_name"];

/// Loads a dataset from a manifest CSV. Image paths are resolved relative
/// to the manifest's directory; class indices are assigned by lexicographic
/// class-name order, so the label table does not depend on row order.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest_path)
        .map_err(|e| Error::Load(format!("{}: {}", manifest_path.display(), e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Load(format!("{}: {}", manifest_path.display(), e)))?;
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Load(format!(
            "{}: header must be {:?}, got {:?}",
            manifest_path.display(),
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record =
            record.map_err(|e| Error::Load(format!("{}: line {}: {}", manifest_path.display(), line, e)))?;
        if record.len() != 3 {
            return Err(Error::Load(format!(
                "{}: line {}: expected 3 fields, got {}",
                manifest_path.display(),
                line,
                record.len()
            )));
        }
        rows.push((
            line,
            record[0].to_string(),
            record[1].to_string(),
            record[2].to_string(),
        ));
    }
    if rows.is_empty() {
        return Err(Error::Load(format!(
            "{}: manifest has no data rows",
            manifest_path.display()
        )));
    }

    let class_names: Vec<String> = rows
        .iter()
        .map(|(_, _, _, name)| name.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::with_capacity(rows.len());
    for (line, id, rel_path, class_name) in rows {
        let label = class_names
            .binary_search(&class_name)
            .expect("every row's class is in the table");
        let pixels = read_pgm(&base.join(&rel_path)).map_err(|e| {
            Error::Load(format!(
                "{}: line {} (id {:?}): {}",
                manifest_path.display(),
                line,
                id,
                e
            ))
        })?;
        samples.push(ImageSample::new(id.clone(), pixels, label).map_err(|e| {
            Error::Load(format!(
                "{}: line {} (id {:?}): {}",
                manifest_path.display(),
                line,
                id,
                e
            ))
        })?);
    }
    Dataset::new(samples, class_names)
}

/// Writes `ds` as `dir/manifest.csv` plus one PGM per sample under
/// `dir/images/`. Sample ids become file names, so they must use only
/// ASCII letters, digits, `_`, `-`, and `.`.
///
/// Loading the result reproduces the dataset exactly when pixels are
/// integral and `class_names` is lexicographically sorted (both true for
/// synthesized and previously-loaded datasets).
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    for s in ds.samples() {
        if !s
            .id()
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        {
            return Err(Error::InvalidData(format!(
                "sample id {:?} is not a safe file name",
                s.id()
            )));
        }
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(HEADER)
        .map_err(|e| Error::Serialize(format!("manifest: {}", e)))?;
    for s in ds.samples() {
        let rel = format!("images/{}.pgm", s.id());
        writer
            .write_record([s.id(), rel.as_str(), &ds.class_names()[s.label()]])
            .map_err(|e| Error::Serialize(format!("manifest: {}", e)))?;
        write_pgm(&dir.join(&rel), s.pixels())?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Serialize(format!("manifest: {}", e)))?;
    write_atomic(&dir.join(MANIFEST_NAME), &bytes)
}

/// Exports a feature matrix as CSV with header `id,label,f0..f{D-1}` and
/// full-precision floats. Row i pairs `ids[i]` and `labels[i]` with
/// `features.row(i)`.
pub fn save_features_csv(
    path: &Path,
    ids: &[String],
    labels: &[usize],
    features: &FeatureMatrix,
) -> Result<()> {
    if ids.len() != features.n_rows() || labels.len() != features.n_rows() {
        return Err(Error::ShapeMismatch(format!(
            "feature export: {} ids, {} labels, {} feature rows",
            ids.len(),
            labels.len(),
            features.n_rows()
        )));
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..features.n_cols()).map(|j| format!("f{}", j)));
    writer
        .write_record(&header)
        .map_err(|e| Error::Serialize(format!("features: {}", e)))?;
    for i in 0..features.n_rows() {
        let mut record = vec![ids[i].clone(), labels[i].to_string()];
        record.extend(features.row(i).iter().map(|v| v.to_string()));
        writer
            .write_record(&record)
            .map_err(|e| Error::Serialize(format!("features: {}", e)))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Serialize(format!("features: {}", e)))?;
    write_atomic(path, &bytes)
}
