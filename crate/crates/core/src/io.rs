//! Dataset CSV files and JSON documents.
//!
//! CSV layout: a header `f1,...,fd` optionally followed by `label`, one sample
//! per row, comma-delimited UTF-8. Floats are written with 17 significant
//! digits so a write/read cycle reproduces every bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsvData {
    pub dim: usize,
    pub samples: Vec<DVector<f64>>,
    pub labels: Option<Vec<ClassId>>,
}

impl CsvData {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Requires a label column.
    pub fn into_labeled(self, name: &str) -> Result<LabeledDataset> {
        let labels = self
            .labels
            .ok_or_else(|| Error::input(format!("{name}: a 'label' column is required")))?;
        LabeledDataset::new(self.dim, self.samples, labels)
    }
}

fn parse_err(name: &str, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: name.to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_csv<R: Read>(r: R, name: &str) -> Result<CsvData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(r);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::input(format!("{name}: no samples (file is empty)"))),
        Some(h) => h.map_err(|e| parse_err(name, 1, e.to_string()))?,
    };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let has_label = cols.last() == Some(&"label");
    let dim = cols.len() - usize::from(has_label);
    if dim == 0 {
        return Err(parse_err(name, 1, "header declares no feature columns"));
    }
    for (i, c) in cols[..dim].iter().enumerate() {
        if *c != format!("f{}", i + 1) {
            return Err(parse_err(
                name,
                1,
                format!("expected header column 'f{}', found '{c}'", i + 1),
            ));
        }
    }
    let mut samples = Vec::new();
    let mut labels = has_label.then(Vec::new);
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(name, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != cols.len() {
            return Err(parse_err(
                name,
                line,
                format!("expected {} fields, found {}", cols.len(), rec.len()),
            ));
        }
        let mut x = DVector::zeros(dim);
        for j in 0..dim {
            let field = rec[j].trim();
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(name, line, format!("column f{}: '{field}' is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(name, line, format!("column f{}: non-finite value", j + 1)));
            }
            x[j] = v;
        }
        if let Some(ls) = labels.as_mut() {
            let field = rec[dim].trim();
            let l: ClassId = field
                .parse()
                .map_err(|_| parse_err(name, line, format!("label '{field}' is not a non-negative integer")))?;
            ls.push(l);
        }
        samples.push(x);
    }
    if samples.is_empty() {
        return Err(Error::input(format!("{name}: no samples")));
    }
    Ok(CsvData { dim, samples, labels })
}

pub fn read_csv(path: &Path) -> Result<CsvData> {
    let f = File::open(path)?;
    parse_csv(f, &path.display().to_string())
}

pub fn read_labeled(path: &Path) -> Result<LabeledDataset> {
    read_csv(path)?.into_labeled(&path.display().to_string())
}

pub fn write_csv<W: Write>(mut w: W, dim: usize, samples: &[DVector<f64>], labels: Option<&[ClassId]>) -> Result<()> {
    let mut header: Vec<String> = (1..=dim).map(|i| format!("f{i}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(","))?;
    let mut line = String::new();
    for (i, x) in samples.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        line.clear();
        for (j, v) in x.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:.16e}"));
        }
        if let Some(ls) = labels {
            line.push_str(&format!(",{}", ls[i]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &LabeledDataset) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_csv(f, data.dim(), data.samples(), Some(data.labels()))
}

/// Provenance block attached to every emitted document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
}

impl Metadata {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            tool: "novelclass".into(),
            version: crate::VERSION.into(),
            command: command.into(),
            seed,
            config,
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// `<path>.meta.json`, the provenance file next to CSV and JSON-lines outputs.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}
