use std::collections::HashMap;
use std::path::Path;

use super::{PipelineError, Result, TabularDataset};
use crate::numcore::Tensor;

/// Cell values treated as missing (compared after trimming, case-insensitive).
pub const MISSING_TOKENS: [&str; 8] = ["", "na", "nan", "null", "?", "inf", "-inf", "+inf"];

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    MISSING_TOKENS.iter().any(|m| t.eq_ignore_ascii_case(m))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    /// Names of columns that were label-encoded.
    pub categorical_columns: Vec<String>,
}

/// First-appearance integer codes.
#[derive(Default)]
struct Encoder {
    codes: HashMap<String, usize>,
    names: Vec<String>,
}

impl Encoder {
    fn code(&mut self, value: &str) -> usize {
        if let Some(&c) = self.codes.get(value) {
            return c;
        }
        let c = self.names.len();
        self.codes.insert(value.to_string(), c);
        self.names.push(value.to_string());
        c
    }
}

/// Reads a headed CSV. Rows with any missing cell are dropped; columns with
/// any non-numeric value are label-encoded in order of first appearance, as
/// is the label column.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<(TabularDataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path.as_ref())?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let label_pos = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| PipelineError::MissingLabel(label_column.to_string()))?;
    let mut report = LoadReport::default();
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for record in reader.records() {
        let record = record?;
        report.rows_read += 1;
        if record.len() != header.len() || record.iter().any(is_missing) {
            report.rows_dropped += 1;
            continue;
        }
        rows.push(record);
    }
    if rows.is_empty() {
        return Err(PipelineError::EmptyAfterCleaning);
    }
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != label_pos).collect();
    let categorical: Vec<bool> = feature_cols
        .iter()
        .map(|&c| {
            rows.iter()
                .any(|r| r[c].parse::<f64>().map_or(true, |v| !v.is_finite()))
        })
        .collect();
    report.categorical_columns = feature_cols
        .iter()
        .zip(&categorical)
        .filter(|(_, &cat)| cat)
        .map(|(&c, _)| header[c].clone())
        .collect();
    let mut encoders: Vec<Encoder> = feature_cols.iter().map(|_| Encoder::default()).collect();
    let mut labels_enc = Encoder::default();
    let mut data = Vec::with_capacity(rows.len() * feature_cols.len());
    let mut labels = Vec::with_capacity(rows.len());
    for r in &rows {
        for (k, &c) in feature_cols.iter().enumerate() {
            let v = if categorical[k] {
                encoders[k].code(&r[c]) as f64
            } else {
                r[c].parse::<f64>().expect("checked numeric")
            };
            data.push(v);
        }
        labels.push(labels_enc.code(&r[label_pos]));
    }
    let features = Tensor::new(vec![rows.len(), feature_cols.len()], data)?;
    let names = feature_cols.iter().map(|&c| header[c].clone()).collect();
    let ds = TabularDataset::new(names, features, labels, labels_enc.names)?;
    Ok((ds, report))
}

/// Writes `ds` as a headed CSV with the class name in a trailing
/// `label_column`; floats use shortest round-trip formatting.
pub fn write_csv(ds: &TabularDataset, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..ds.len() {
        record.clear();
        record.extend(ds.features.row(i).iter().map(|v| format!("{v:?}")));
        record.push(ds.class_names[ds.labels[i]].clone());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn missing_cells_drop_rows() {
        let f = file("a,b,label\n1,2,x\n3,,y\n5,6,x\n");
        let (ds, report) = load_csv(f.path(), "label").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(report.rows_dropped, 1);
        assert_eq!(ds.features.data(), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(ds.class_names, vec!["x"]);
    }

    #[test]
    fn categorical_columns_encode_by_first_appearance() {
        let f = file("proto,bytes,label\ntcp,10,normal\nudp,20,attack\ntcp,30,normal\n");
        let (ds, report) = load_csv(f.path(), "label").unwrap();
        let proto: Vec<f64> = (0..3).map(|r| ds.features.get(r, 0)).collect();
        assert_eq!(proto, vec![0.0, 1.0, 0.0]);
        assert_eq!(report.categorical_columns, vec!["proto"]);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.class_names, vec!["normal", "attack"]);
    }

    #[test]
    fn missing_tokens_and_label_errors() {
        let f = file("a,label\nNaN,x\n?,y\nNA,x\ninf,x\n");
        assert!(matches!(
            load_csv(f.path(), "label"),
            Err(PipelineError::EmptyAfterCleaning)
        ));
        let f = file("a,b\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), "label"),
            Err(PipelineError::MissingLabel(_))
        ));
        assert!(load_csv("/nonexistent/file.csv", "label").is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let f = file("a,b,label\n0.1,2,x\n-3.5,1e-7,y\n");
        let (ds, _) = load_csv(f.path(), "label").unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path(), "label").unwrap();
        let (back, _) = load_csv(out.path(), "label").unwrap();
        assert_eq!(back, ds);
    }
}
