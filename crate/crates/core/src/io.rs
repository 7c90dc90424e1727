//! Array and label file I/O.
//!
//! Supported formats:
//! - NPY v1.0, 2-D, C-order, little-endian `f4`/`f8`. 32-bit payloads are
//!   widened losslessly to 64-bit on load.
//! - CSV embeddings: comma-separated rows of constant arity, with a single
//!   optional header line auto-detected by a non-numeric first row.
//! - Label / flag / score CSVs: one value per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};

/// On-disk array encodings accepted by [`load_embeddings`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayFormat {
    Npy,
    Csv,
}

impl ArrayFormat {
    /// Picks the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> ArrayFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("npy") => ArrayFormat::Npy,
            _ => ArrayFormat::Csv,
        }
    }
}

/// Loads a 2-D array of embeddings; all values widen to 64-bit reals.
pub fn load_embeddings(path: &Path, format: ArrayFormat) -> Result<EmbeddingMatrix> {
    let data = match format {
        ArrayFormat::Npy => read_npy(path)?,
        ArrayFormat::Csv => read_csv_matrix(path)?,
    };
    EmbeddingMatrix::new(data)
}

/// Writes embeddings in the requested format (`f8` payload for NPY).
pub fn save_embeddings(path: &Path, format: ArrayFormat, x: &EmbeddingMatrix) -> Result<()> {
    match format {
        ArrayFormat::Npy => write_npy(path, x.data()),
        ArrayFormat::Csv => write_csv_matrix(path, x.data()),
    }
}

const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Reads an NPY v1.0 file holding a 2-D C-order float array.
pub fn read_npy(path: &Path) -> Result<Array2<f64>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    read_exact_or_format(&mut reader, &mut magic, "magic")?;
    if &magic != NPY_MAGIC {
        return Err(Error::Format("not an NPY file (bad magic)".into()));
    }
    let mut version = [0u8; 2];
    read_exact_or_format(&mut reader, &mut version, "version")?;
    if version[0] != 1 {
        return Err(Error::Format(format!(
            "unsupported NPY version {}.{}",
            version[0], version[1]
        )));
    }
    let mut len_bytes = [0u8; 2];
    read_exact_or_format(&mut reader, &mut len_bytes, "header length")?;
    let header_len = u16::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    read_exact_or_format(&mut reader, &mut header, "header")?;
    let header = String::from_utf8(header)
        .map_err(|_| Error::Format("NPY header is not valid UTF-8".into()))?;

    let descr = extract_header_field(&header, "descr")?;
    let item_size = match descr.as_str() {
        "<f8" => 8,
        "<f4" => 4,
        other => {
            return Err(Error::Format(format!(
                "unsupported NPY dtype {other:?}, expected '<f4' or '<f8'"
            )))
        }
    };
    let fortran = extract_header_field(&header, "fortran_order")?;
    if fortran != "False" {
        return Err(Error::Format("Fortran-order NPY arrays are not supported".into()));
    }
    let (rows, cols) = parse_shape(&extract_header_field(&header, "shape")?)?;

    let n_values = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("NPY shape overflows".into()))?;
    let mut payload = vec![0u8; n_values * item_size];
    read_exact_or_format(&mut reader, &mut payload, "payload")?;

    let mut values = Vec::with_capacity(n_values);
    match item_size {
        8 => {
            for chunk in payload.chunks_exact(8) {
                values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
        _ => {
            for chunk in payload.chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite value {v} at flat index {i} in {}",
            path.display()
        )));
    }
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::Format(format!("NPY shape mismatch: {e}")))
}

/// Writes a 2-D array as NPY v1.0 with dtype `<f8`.
pub fn write_npy(path: &Path, data: &Array2<f64>) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    let mut header = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}",
        data.nrows(),
        data.ncols()
    );
    // Total header block (magic + version + len + dict) padded to 64 bytes.
    let unpadded = NPY_MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    writer.write_all(NPY_MAGIC)?;
    writer.write_all(&[1u8, 0u8])?;
    writer.write_all(&(header.len() as u16).to_le_bytes())?;
    writer.write_all(header.as_bytes())?;
    for row in data.rows() {
        for v in row {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn read_exact_or_format<R: Read>(reader: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated NPY file while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

/// Pulls the value of one `'key': value` pair out of the header dict.
fn extract_header_field(header: &str, key: &str) -> Result<String> {
    let pat = format!("'{key}':");
    let start = header
        .find(&pat)
        .ok_or_else(|| Error::Format(format!("NPY header missing {key:?}")))?
        + pat.len();
    let rest = header[start..].trim_start();
    let value = if let Some(stripped) = rest.strip_prefix('\'') {
        let end = stripped
            .find('\'')
            .ok_or_else(|| Error::Format(format!("unterminated string for {key:?}")))?;
        stripped[..end].to_string()
    } else if rest.starts_with('(') {
        let end = rest
            .find(')')
            .ok_or_else(|| Error::Format(format!("unterminated tuple for {key:?}")))?;
        rest[..=end].to_string()
    } else {
        rest.split([',', '}'])
            .next()
            .unwrap_or("")
            .trim()
            .to_string()
    };
    Ok(value)
}

fn parse_shape(shape: &str) -> Result<(usize, usize)> {
    let inner = shape
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Format(format!("malformed shape {shape:?}")))?;
    let dims: Vec<usize> = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad shape dimension {s:?}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(Error::Format(format!(
            "expected a 2-D array, got {} dimension(s)",
            dims.len()
        )));
    }
    Ok((dims[0], dims[1]))
}

/// Reads a CSV of numeric rows with constant arity.
fn read_csv_matrix(path: &Path) -> Result<Array2<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if let Some(w) = width {
                    if values.len() != w {
                        return Err(Error::Format(format!(
                            "CSV row {} has {} fields, expected {w}",
                            lineno + 1,
                            values.len()
                        )));
                    }
                } else {
                    width = Some(values.len());
                }
                if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "non-finite value {v} at CSV row {}",
                        lineno + 1
                    )));
                }
                rows.push(values);
            }
            Err(_) if rows.is_empty() && width.is_none() => {
                // Non-numeric first row: treat as a header and skip it.
                continue;
            }
            Err(e) => {
                return Err(Error::Format(format!(
                    "CSV row {} is not numeric: {e}",
                    lineno + 1
                )))
            }
        }
    }
    let width = width.ok_or_else(|| Error::Format("CSV file holds no data rows".into()))?;
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, width), flat)
        .map_err(|e| Error::Format(format!("CSV shape mismatch: {e}")))
}

fn write_csv_matrix(path: &Path, data: &Array2<f64>) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for row in data.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(writer, "{}", line.join(","))?;
    }
    writer.flush()?;
    Ok(())
}

/// One non-negative integer per line.
pub fn load_labels_csv(path: &Path) -> Result<Vec<usize>> {
    let reader = BufReader::new(File::open(path)?);
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let v: usize = trimmed.parse().map_err(|_| {
            Error::Format(format!("line {} is not a non-negative integer: {trimmed:?}", lineno + 1))
        })?;
        labels.push(v);
    }
    if labels.is_empty() {
        return Err(Error::Format("labels file holds no entries".into()));
    }
    Ok(labels)
}

pub fn save_labels_csv(path: &Path, labels: &[usize]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for l in labels {
        writeln!(writer, "{l}")?;
    }
    writer.flush()?;
    Ok(())
}

/// One `0`/`1` flag per line.
pub fn load_flags_csv(path: &Path) -> Result<Vec<bool>> {
    Ok(load_labels_csv(path)?
        .into_iter()
        .map(|v| v != 0)
        .collect())
}

pub fn save_flags_csv(path: &Path, flags: &[bool]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for f in flags {
        writeln!(writer, "{}", u8::from(*f))?;
    }
    writer.flush()?;
    Ok(())
}

/// Single-column CSV of scores aligned with query row order.
pub fn load_scores_csv(path: &Path) -> Result<Vec<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut scores = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let v: f64 = trimmed
            .parse()
            .map_err(|_| Error::Format(format!("line {} is not a number: {trimmed:?}", lineno + 1)))?;
        if !v.is_finite() {
            return Err(Error::Data(format!("non-finite score at line {}", lineno + 1)));
        }
        scores.push(v);
    }
    if scores.is_empty() {
        return Err(Error::Format("scores file holds no entries".into()));
    }
    Ok(scores)
}

pub fn save_scores_csv(path: &Path, scores: &[f64]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for s in scores {
        writeln!(writer, "{s:?}")?;
    }
    writer.flush()?;
    Ok(())
}
