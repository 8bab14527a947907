use std::collections::BTreeMap;
use std::path::Path;

use super::{DataError, Dataset};

/// Reads a numeric CSV. `label_column` holds integral class values, which are
/// remapped to dense IDs `0..C` in ascending numeric order. All other columns
/// become features. Row numbers in errors are 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>, label_column: usize, skip_header: bool) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let io_err = |source: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| io_err(e.into()))?;

    let mut width = None;
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1 + usize::from(skip_header);
        let record = record.map_err(|e| io_err(e.into()))?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DataError::RaggedRows {
                row,
                expected,
                found: record.len(),
            });
        }
        if label_column >= expected {
            return Err(DataError::InvalidSpec(format!(
                "label_column {label_column} out of range for {expected} columns"
            )));
        }
        for (column, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| DataError::NonNumericCell {
                row,
                column,
                value: cell.to_string(),
            })?;
            if column == label_column {
                if value.fract() != 0.0 || !value.is_finite() {
                    return Err(DataError::NonIntegralLabel { row, value });
                }
                raw_labels.push(value as i64);
            } else {
                features.push(value);
            }
        }
    }
    let width = width.ok_or_else(|| DataError::InvalidDataset(format!("{} has no data rows", path.display())))?;
    if width < 2 {
        return Err(DataError::InvalidDataset("need at least one feature column besides the label".into()));
    }
    let dense: BTreeMap<i64, usize> = raw_labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(id, raw)| (raw, id))
        .collect();
    let labels = raw_labels.iter().map(|raw| dense[raw]).collect();
    Dataset::new(features, width - 1, labels, dense.len())
}
