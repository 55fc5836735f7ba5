//! Sample-set serialization: CSV (one row per sample, locale-independent)
//! and a little-endian binary format with header magic `RGSS`, `u32 n`,
//! `u32 d`, then `n*d` float64 values. Labeled sets carry one extra 0/1
//! column (0 = good, 1 = adversarial); readers are told via `labeled`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::contamination::{ContaminatedSet, Label};
use crate::error::{Error, Result};
use crate::Samples;

pub const MAGIC: &[u8; 4] = b"RGSS";

fn with_labels(samples: &Samples, labels: Option<&[Label]>) -> Result<Samples> {
    match labels {
        None => Ok(samples.clone()),
        Some(ls) => {
            if ls.len() != samples.nrows() {
                return Err(Error::InvalidInput("label count mismatch".into()));
            }
            let (n, d) = (samples.nrows(), samples.ncols());
            let mut out = DMatrix::zeros(n, d + 1);
            out.view_mut((0, 0), (n, d)).copy_from(samples);
            for (r, l) in ls.iter().enumerate() {
                out[(r, d)] = match l {
                    Label::Good => 0.0,
                    Label::Adversarial => 1.0,
                };
            }
            Ok(out)
        }
    }
}

fn split_labels(data: Samples, labeled: bool) -> Result<(Samples, Option<Vec<Label>>)> {
    if !labeled {
        return Ok((data, None));
    }
    let d = data.ncols();
    if d < 2 {
        return Err(Error::InvalidInput(
            "labeled file must have at least two columns".into(),
        ));
    }
    let samples = data.view((0, 0), (data.nrows(), d - 1)).into_owned();
    let mut labels = Vec::with_capacity(data.nrows());
    for r in 0..data.nrows() {
        let v = data[(r, d - 1)];
        labels.push(if v >= 0.5 { Label::Adversarial } else { Label::Good });
    }
    Ok((samples, Some(labels)))
}

/// Writes the binary format; appends the label column when given.
pub fn write_binary(
    path: impl AsRef<Path>,
    samples: &Samples,
    labels: Option<&[Label]>,
) -> Result<()> {
    let path = path.as_ref();
    let data = with_labels(samples, labels)?;
    let mut w = BufWriter::new(
        File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let ctx = |e: std::io::Error| Error::io(path.display().to_string(), e);
    w.write_all(MAGIC).map_err(ctx)?;
    w.write_u32::<LittleEndian>(data.nrows() as u32).map_err(ctx)?;
    w.write_u32::<LittleEndian>(data.ncols() as u32).map_err(ctx)?;
    for r in 0..data.nrows() {
        for c in 0..data.ncols() {
            w.write_f64::<LittleEndian>(data[(r, c)]).map_err(ctx)?;
        }
    }
    w.flush().map_err(ctx)
}

/// Reads the binary format. With `labeled`, the last column is interpreted
/// as the 0/1 label column.
pub fn read_binary(path: impl AsRef<Path>, labeled: bool) -> Result<(Samples, Option<Vec<Label>>)> {
    let path = path.as_ref();
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let ctx = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(ctx)?;
    if &magic != MAGIC {
        return Err(Error::InvalidInput(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let n = r.read_u32::<LittleEndian>().map_err(ctx)? as usize;
    let d = r.read_u32::<LittleEndian>().map_err(ctx)? as usize;
    let mut data = DMatrix::zeros(n, d);
    for row in 0..n {
        for col in 0..d {
            data[(row, col)] = r.read_f64::<LittleEndian>().map_err(ctx)?;
        }
    }
    split_labels(data, labeled)
}

/// Writes CSV: no header, one sample per row, `.` decimal separator.
pub fn write_csv(
    path: impl AsRef<Path>,
    samples: &Samples,
    labels: Option<&[Label]>,
) -> Result<()> {
    let path = path.as_ref();
    let data = with_labels(samples, labels)?;
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in 0..data.nrows() {
        let row: Vec<String> = (0..data.ncols())
            .map(|c| format!("{:?}", data[(r, c)]))
            .collect();
        w.write_record(&row)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads CSV written by [`write_csv`].
pub fn read_csv(path: impl AsRef<Path>, labeled: bool) -> Result<(Samples, Option<Vec<Label>>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(BufReader::new(file));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let row: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{}: empty file", path.display())));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput(format!(
            "{}: ragged rows",
            path.display()
        )));
    }
    let data = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
    split_labels(data, labeled)
}

/// Convenience: writes a contaminated set (with labels when present) by
/// extension (`.csv` for CSV, anything else binary).
pub fn write_set(path: impl AsRef<Path>, set: &ContaminatedSet) -> Result<()> {
    let path = path.as_ref();
    let labels = set.labels.as_deref();
    if path.extension().is_some_and(|e| e == "csv") {
        write_csv(path, &set.samples, labels)
    } else {
        write_binary(path, &set.samples, labels)
    }
}

/// Convenience counterpart of [`write_set`].
pub fn read_set(path: impl AsRef<Path>, labeled: bool, epsilon: f64) -> Result<ContaminatedSet> {
    let path = path.as_ref();
    let (samples, labels) = if path.extension().is_some_and(|e| e == "csv") {
        read_csv(path, labeled)?
    } else {
        read_binary(path, labeled)?
    };
    Ok(ContaminatedSet {
        samples,
        labels,
        epsilon,
    })
}
