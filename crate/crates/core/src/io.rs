//! File formats: datasets (JSON lines), numeric matrices and label lists
//! (CSV), grey-scale images (PGM), and the float rendering they share.
//!
//! Every float written by this crate goes through [`fmt_g17`], which keeps
//! 17 significant digits so that values survive a write/read cycle
//! bit-for-bit.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::data::{CaseMode, Channel, Dataset, LabelAlphabet, Sample, SplitSpec, CHANNEL_COUNT};
use crate::{Error, Result};

// ---------------------------------------------------------------- floats

/// Render a float with 17 significant digits (the C `%.17g` rule: fixed
/// notation for decimal exponents in `-4..17`, scientific otherwise,
/// trailing zeros stripped). 17 digits guarantee `parse` returns the exact
/// same bits.
pub fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:.16e} output");
    let exp: i32 = exp.parse().expect("numeric exponent");
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };

    let mut out = String::with_capacity(24);
    if neg {
        out.push('-');
    }
    if exp < -4 || exp >= 17 {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        out.push('e');
        out.push_str(&exp.to_string());
    } else if exp >= 0 {
        let int_digits = exp as usize + 1;
        if digits.len() > int_digits {
            out.push_str(&digits[..int_digits]);
            out.push('.');
            out.push_str(&digits[int_digits..]);
        } else {
            out.push_str(digits);
            for _ in digits.len()..int_digits {
                out.push('0');
            }
        }
    } else {
        out.push_str("0.");
        for _ in 0..(-exp as usize - 1) {
            out.push('0');
        }
        out.push_str(digits);
    }
    out
}

/// Parse a float, wrapping failures in a file-position error.
pub fn parse_f64(text: &str, path: &str, line: usize) -> Result<f64> {
    text.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        message: format!("expected a number, got {text:?}"),
    })
}

fn open_reader(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(std::io::BufReader::new(f))
}

fn create_writer(path: &Path) -> Result<BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(BufWriter::new(f))
}

// ------------------------------------------------------------- datasets

/// One line of the dataset file.
#[derive(Debug, Deserialize)]
struct DatasetRecord {
    id: String,
    label: String,
    #[serde(default)]
    writer: String,
    ch: Vec<Vec<f64>>,
}

/// Write a dataset as JSON lines: one object per sample with keys `id`,
/// `label`, `writer` (empty when unknown) and `ch`, a 13-element array of
/// per-channel value arrays.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    for s in &ds.samples {
        let mut line = String::new();
        line.push_str("{\"id\":");
        line.push_str(&serde_json::to_string(&s.id).expect("string encodes"));
        line.push_str(",\"label\":");
        line.push_str(&serde_json::to_string(&s.label.to_string()).expect("string encodes"));
        line.push_str(",\"writer\":");
        let writer = s.writer.as_deref().unwrap_or("");
        line.push_str(&serde_json::to_string(writer).expect("string encodes"));
        line.push_str(",\"ch\":[");
        for (ci, ch) in s.channels().iter().enumerate() {
            if ci > 0 {
                line.push(',');
            }
            line.push('[');
            for (vi, v) in ch.values.iter().enumerate() {
                if vi > 0 {
                    line.push(',');
                }
                line.push_str(&fmt_g17(*v));
            }
            line.push(']');
        }
        line.push_str("]}");
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read a dataset, inferring the smallest alphabet that covers its labels.
pub fn read_dataset(path: &Path, split: SplitSpec) -> Result<Dataset> {
    read_dataset_impl(path, split, None)
}

/// Read a dataset with an explicit case mode (so e.g. a file holding only
/// lowercase labels can still be typed against the combined alphabet).
pub fn read_dataset_as(path: &Path, split: SplitSpec, case: CaseMode) -> Result<Dataset> {
    read_dataset_impl(path, split, Some(case))
}

fn read_dataset_impl(path: &Path, split: SplitSpec, case: Option<CaseMode>) -> Result<Dataset> {
    let paths = path.display().to_string();
    let reader = open_reader(path)?;
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(paths.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: paths.clone(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        samples.push(record_to_sample(rec, &paths, lineno + 1)?);
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("{paths}: empty dataset")));
    }
    let alphabet = match case {
        Some(c) => LabelAlphabet::new(c),
        None => LabelAlphabet::infer(samples.iter().map(|s| s.label))?,
    };
    Dataset::new(samples, alphabet, split)
}

fn record_to_sample(rec: DatasetRecord, path: &str, line: usize) -> Result<Sample> {
    let mut chars = rec.label.chars();
    let label = match (chars.next(), chars.next()) {
        (Some(c), None) => c,
        _ => {
            return Err(Error::Parse {
                path: path.to_string(),
                line,
                message: format!("label {:?} is not a single character", rec.label),
            })
        }
    };
    if rec.ch.len() != CHANNEL_COUNT {
        return Err(Error::Parse {
            path: path.to_string(),
            line,
            message: format!("expected {CHANNEL_COUNT} channel arrays, got {}", rec.ch.len()),
        });
    }
    let writer = if rec.writer.is_empty() {
        None
    } else {
        Some(rec.writer)
    };
    Sample::from_values(rec.id, label, writer, rec.ch)
}

// ------------------------------------------------------------ raw import

/// Field mapping for [`import_raw`]: where in each raw JSON object to find
/// the sample id, the label, the optional writer, and the 13 channels (in
/// channel order).
#[derive(Debug, Clone)]
pub struct ImportConfig {
    pub id_field: String,
    pub label_field: String,
    pub writer_field: Option<String>,
    pub channel_fields: Vec<String>,
    pub case: Option<CaseMode>,
}

impl Default for ImportConfig {
    fn default() -> Self {
        ImportConfig {
            id_field: "id".into(),
            label_field: "label".into(),
            writer_field: Some("writer".into()),
            channel_fields: crate::data::CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            case: None,
        }
    }
}

/// Import raw JSON-lines recordings into a validated dataset, normalising
/// channel order to the fixed layout. Missing fields name the field and
/// line.
pub fn import_raw(config: &ImportConfig, path: &Path, split: SplitSpec) -> Result<Dataset> {
    if config.channel_fields.len() != CHANNEL_COUNT {
        return Err(Error::invalid(format!(
            "import config must map exactly {CHANNEL_COUNT} channel fields, got {}",
            config.channel_fields.len()
        )));
    }
    let paths = path.display().to_string();
    let reader = open_reader(path)?;
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(paths.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: paths.clone(),
                line: lineno,
                message: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            path: paths.clone(),
            line: lineno,
            message: "expected a JSON object".into(),
        })?;
        let missing = |field: &str| Error::Parse {
            path: paths.clone(),
            line: lineno,
            message: format!("missing field {field:?}"),
        };

        let id = obj
            .get(&config.id_field)
            .and_then(|v| v.as_str())
            .ok_or_else(|| missing(&config.id_field))?
            .to_string();
        let label_str = obj
            .get(&config.label_field)
            .and_then(|v| v.as_str())
            .ok_or_else(|| missing(&config.label_field))?;
        let mut chars = label_str.chars();
        let label = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(Error::Parse {
                    path: paths.clone(),
                    line: lineno,
                    message: format!("label {label_str:?} is not a single character"),
                })
            }
        };
        let writer = match &config.writer_field {
            Some(f) => obj
                .get(f)
                .and_then(|v| v.as_str())
                .filter(|s| !s.is_empty())
                .map(|s| s.to_string()),
            None => None,
        };
        let mut channels = Vec::with_capacity(CHANNEL_COUNT);
        for (ci, field) in config.channel_fields.iter().enumerate() {
            let arr = obj
                .get(field)
                .and_then(|v| v.as_array())
                .ok_or_else(|| missing(field))?;
            let mut values = Vec::with_capacity(arr.len());
            for v in arr {
                let f = v.as_f64().ok_or_else(|| Error::Parse {
                    path: paths.clone(),
                    line: lineno,
                    message: format!("non-numeric value in field {field:?}"),
                })?;
                values.push(f);
            }
            channels.push(Channel::new(ci, values)?);
        }
        samples.push(Sample::new(id, label, writer, channels)?);
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("{paths}: empty dataset")));
    }
    let alphabet = match config.case {
        Some(c) => LabelAlphabet::new(c),
        None => LabelAlphabet::infer(samples.iter().map(|s| s.label))?,
    };
    Dataset::new(samples, alphabet, split)
}

// -------------------------------------------------------------- matrices

/// A dense real matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Matrix {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = Matrix { headers, rows };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for h in &self.headers {
            if !seen.insert(h) {
                return Err(Error::invalid(format!("duplicate column header {h:?}")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.headers.len() {
                return Err(Error::invalid(format!(
                    "row {i} has {} values but there are {} headers",
                    row.len(),
                    self.headers.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.headers.len()
    }
}

/// Write a matrix as CSV with a header row; floats use [`fmt_g17`].
/// Non-finite values are rejected.
pub fn write_matrix(m: &Matrix, path: &Path) -> Result<()> {
    m.check()?;
    for (i, row) in m.rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite value {v} at row {i}, column {:?}",
                    m.headers[j]
                )));
            }
        }
    }
    let mut w = create_writer(path)?;
    writeln!(w, "{}", m.headers.join(",")).map_err(|e| Error::io(path.display().to_string(), e))?;
    for row in &m.rows {
        let line: Vec<String> = row.iter().map(|v| fmt_g17(*v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read a matrix written by [`write_matrix`]. Ragged rows, duplicate
/// headers and unparseable numbers are errors naming the spot.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let paths = path.display().to_string();
    let reader = open_reader(path)?;
    let mut lines = reader.lines().enumerate();
    let headers: Vec<String> = match lines.next() {
        Some((_, line)) => line
            .map_err(|e| Error::io(paths.clone(), e))?
            .split(',')
            .map(|s| s.to_string())
            .collect(),
        None => return Err(Error::invalid(format!("{paths}: empty matrix file"))),
    };
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(paths.clone(), e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != headers.len() {
            return Err(Error::Parse {
                path: paths.clone(),
                line: lineno + 1,
                message: format!(
                    "expected {} fields, got {}",
                    headers.len(),
                    fields.len()
                ),
            });
        }
        let mut row = Vec::with_capacity(fields.len());
        for f in fields {
            row.push(parse_f64(f, &paths, lineno + 1)?);
        }
        rows.push(row);
    }
    Matrix::new(headers, rows)
}

// ---------------------------------------------------------------- labels

/// Write `sample_id,label` rows (with header) for ground truths.
pub fn write_labels(path: &Path, ids: &[String], labels: &[char]) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} ids but {} labels",
            ids.len(),
            labels.len()
        )));
    }
    let mut w = create_writer(path)?;
    writeln!(w, "sample_id,label").map_err(|e| Error::io(path.display().to_string(), e))?;
    for (id, label) in ids.iter().zip(labels) {
        writeln!(w, "{id},{label}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read a labels file written by [`write_labels`].
pub fn read_labels(path: &Path) -> Result<Vec<(String, char)>> {
    let paths = path.display().to_string();
    let reader = open_reader(path)?;
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(paths.clone(), e))?;
        if lineno == 0 {
            if line.trim() != "sample_id,label" {
                return Err(Error::Parse {
                    path: paths.clone(),
                    line: 1,
                    message: format!("expected header \"sample_id,label\", got {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, label)) = line.rsplit_once(',') else {
            return Err(Error::Parse {
                path: paths.clone(),
                line: lineno + 1,
                message: "expected two comma-separated fields".into(),
            });
        };
        let mut chars = label.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            return Err(Error::Parse {
                path: paths.clone(),
                line: lineno + 1,
                message: format!("label {label:?} is not a single character"),
            });
        };
        out.push((id.to_string(), c));
    }
    Ok(out)
}

// ------------------------------------------------------------------ pgm

/// Write a binary 8-bit PGM image. `pixels` is row-major, `cols` wide.
pub fn write_pgm(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows * cols != pixels.len() {
        return Err(Error::invalid(format!(
            "pgm: {rows}x{cols} needs {} pixels, got {}",
            rows * cols,
            pixels.len()
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("pgm: empty image"));
    }
    let mut w = create_writer(path)?;
    write!(w, "P5\n{cols} {rows}\n255\n").map_err(|e| Error::io(path.display().to_string(), e))?;
    w.write_all(pixels)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
