//! Dataset files.
//!
//! Two encodings carry the same content (`N`, `n`, `Δ`, `K`, then one row
//! per path with its 1-based label and `n + 1` values):
//!
//! * CSV: a `N,n,delta,K` header line, the header values, then
//!   `label,x_0,...,x_n` rows. Floats are written in shortest round-trip
//!   form, so CSV files also reload exactly.
//! * Binary (little-endian): magic `DIFFPATH`, `u32` version, `u64 N`,
//!   `u64 n`, `u32 K`, `f64 Δ`, then per path a `u32` label followed by
//!   `n + 1` `f64` values.
//!
//! [`write_dataset`]/[`read_dataset`] pick CSV for a `.csv` extension and
//! binary otherwise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use crate::error::{Error, Result};
use crate::sim::{LabeledDataset, Path};

pub const BINARY_MAGIC: &[u8; 8] = b"DIFFPATH";
pub const BINARY_VERSION: u32 = 1;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

pub fn write_csv<W: Write>(data: &LabeledDataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["N", "n", "delta", "K"]).map_err(csv_err)?;
    w.write_record([
        data.len().to_string(),
        data.steps().to_string(),
        data.delta().to_string(),
        data.num_classes().to_string(),
    ])
    .map_err(csv_err)?;
    let mut row = Vec::with_capacity(data.steps() + 2);
    for (path, label) in data.iter() {
        row.clear();
        row.push((label + 1).to_string());
        row.extend(path.values().iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<LabeledDataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = r.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        match records.next() {
            Some(rec) => rec.map_err(|e| Error::Format(e.to_string())),
            None => format_err(format!("missing {what}")),
        }
    };
    let names = next("header")?;
    if names.iter().map(str::trim).collect::<Vec<_>>() != ["N", "n", "delta", "K"] {
        return format_err("CSV header must be `N,n,delta,K`");
    }
    let header = next("header values")?;
    if header.len() != 4 {
        return format_err("header values must have 4 fields");
    }
    let parse_usize = |s: &str, what: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::Format(format!("invalid {what} `{s}`")))
    };
    let n_paths = parse_usize(&header[0], "N")?;
    let steps = parse_usize(&header[1], "n")?;
    let delta: f64 = header[2]
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("invalid delta `{}`", &header[2])))?;
    let k = parse_usize(&header[3], "K")?;
    check_header(n_paths, steps, delta, k)?;

    let mut paths = Vec::with_capacity(n_paths);
    let mut labels = Vec::with_capacity(n_paths);
    for j in 0..n_paths {
        let rec = next(&format!("row {}", j + 1))?;
        if rec.len() != steps + 2 {
            return format_err(format!(
                "row {} has {} fields, expected {}",
                j + 1,
                rec.len(),
                steps + 2
            ));
        }
        let label = parse_usize(&rec[0], "label")?;
        labels.push(check_label(label, k, j)?);
        let values = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("invalid value `{s}` in row {}", j + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        paths.push(Path::new(values)?);
    }
    if records.next().is_some() {
        return format_err(format!("more than N = {n_paths} rows"));
    }
    LabeledDataset::new(paths, labels, k)
}

fn check_header(n_paths: usize, steps: usize, delta: f64, k: usize) -> Result<()> {
    if n_paths == 0 || steps == 0 || k == 0 {
        return format_err("N, n and K must be positive");
    }
    if (delta * steps as f64 - 1.0).abs() > 1e-12 {
        return format_err(format!("delta {delta} is not 1/n for n = {steps}"));
    }
    Ok(())
}

fn check_label(label: usize, k: usize, row: usize) -> Result<usize> {
    if label == 0 || label > k {
        return format_err(format!("label {label} in row {} outside 1..={k}", row + 1));
    }
    Ok(label - 1)
}

pub fn write_binary<W: Write>(data: &LabeledDataset, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    w.write_all(&(data.steps() as u64).to_le_bytes())?;
    w.write_all(&(data.num_classes() as u32).to_le_bytes())?;
    w.write_all(&data.delta().to_le_bytes())?;
    for (path, label) in data.iter() {
        w.write_all(&((label + 1) as u32).to_le_bytes())?;
        for v in path.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(input: R) -> Result<LabeledDataset> {
    let mut r = BufReader::new(input);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for a dataset header".into()))?;
    if &magic != BINARY_MAGIC {
        return format_err("not a binary dataset file (bad magic)");
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    let mut u32_at = |r: &mut BufReader<R>| -> Result<u32> {
        r.read_exact(&mut b4).map_err(|_| Error::Format("truncated file".into()))?;
        Ok(u32::from_le_bytes(b4))
    };
    let version = u32_at(&mut r)?;
    if version != BINARY_VERSION {
        return format_err(format!("unsupported dataset version {version}"));
    }
    let mut u64_at = |r: &mut BufReader<R>| -> Result<[u8; 8]> {
        r.read_exact(&mut b8).map_err(|_| Error::Format("truncated file".into()))?;
        Ok(b8)
    };
    let n_paths = u64::from_le_bytes(u64_at(&mut r)?) as usize;
    let steps = u64::from_le_bytes(u64_at(&mut r)?) as usize;
    let k = u32_at(&mut r)? as usize;
    let delta = f64::from_le_bytes(u64_at(&mut r)?);
    check_header(n_paths, steps, delta, k)?;
    let mut paths = Vec::with_capacity(n_paths.min(1 << 20));
    let mut labels = Vec::with_capacity(n_paths.min(1 << 20));
    for j in 0..n_paths {
        labels.push(check_label(u32_at(&mut r)? as usize, k, j)?);
        let mut values = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            values.push(f64::from_le_bytes(u64_at(&mut r)?));
        }
        paths.push(Path::new(values)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return format_err("trailing bytes after the last path");
    }
    LabeledDataset::new(paths, labels, k)
}

fn is_csv(path: &FsPath) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn write_dataset(data: &LabeledDataset, path: impl AsRef<FsPath>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path)?;
    if is_csv(path) {
        write_csv(data, BufWriter::new(file))
    } else {
        write_binary(data, file)
    }
}

pub fn read_dataset(path: impl AsRef<FsPath>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    if is_csv(path) {
        read_csv(BufReader::new(file))
    } else {
        read_binary(file)
    }
}
