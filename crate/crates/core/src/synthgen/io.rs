use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Annotation, Split, SparseDataset, TaskKind};
use crate::diff::Tensor;
use crate::error::{Error, Result};

const FORMAT: &str = "nt-dataset-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub generator: String,
    pub kind: TaskKind,
    pub config: serde_json::Value,
    pub seed: u64,
    pub m: usize,
    pub dims: usize,
    pub outputs: usize,
    #[serde(default)]
    pub regions: Option<(usize, usize)>,
    pub splits: Vec<Split>,
    pub annotations_bytes: usize,
    #[serde(default)]
    pub has_posterior: bool,
}

fn annotations_csv(ds: &SparseDataset) -> String {
    let mut out = String::from("example_id,set,annotation\n");
    let mut emit = |set: &str, groups: &[Vec<Annotation>]| {
        for (i, anns) in groups.iter().enumerate() {
            for a in anns {
                let toks: Vec<String> = a.iter().map(|t| t.to_string()).collect();
                out.push_str(&format!("{i},{set},{}\n", toks.join(" ")));
            }
        }
    };
    emit("observed", &ds.observed);
    if let Some(full) = &ds.full {
        emit("full", full);
    }
    out
}

fn write_f64s<W: Write>(w: &mut W, data: &[f64]) -> Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// JSON header line, row-major little-endian features, annotation CSV, then
/// the posterior payload when present.
pub fn write_dataset<W: Write>(mut w: W, ds: &SparseDataset) -> Result<()> {
    ds.validate()?;
    let csv = annotations_csv(ds);
    let header = DatasetHeader {
        format: FORMAT.into(),
        generator: ds.generator.clone(),
        kind: ds.kind,
        config: ds.config.clone(),
        seed: ds.seed,
        m: ds.len(),
        dims: ds.features.cols(),
        outputs: ds.outputs,
        regions: ds.regions,
        splits: ds.splits.clone(),
        annotations_bytes: csv.len(),
        has_posterior: ds.posterior.is_some(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    write_f64s(&mut w, ds.features.data())?;
    w.write_all(csv.as_bytes())?;
    if let Some(p) = &ds.posterior {
        write_f64s(&mut w, p.data())?;
    }
    w.flush()?;
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|_| {
        Error::invalid(format!("{what} payload size mismatch: expected {n} values"))
    })?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn parse_annotations(
    csv: &str,
    m: usize,
) -> Result<(Vec<Vec<Annotation>>, Option<Vec<Vec<Annotation>>>)> {
    let mut observed = vec![Vec::new(); m];
    let mut full: Vec<Vec<Annotation>> = vec![Vec::new(); m];
    let mut has_full = false;
    let mut lines = csv.lines();
    if lines.next() != Some("example_id,set,annotation") {
        return Err(Error::invalid("annotation CSV header missing"));
    }
    for (n, line) in lines.enumerate() {
        let bad = || Error::invalid(format!("annotation CSV line {}: {line:?}", n + 2));
        let mut cols = line.splitn(3, ',');
        let (Some(id), Some(set), Some(ann)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(bad());
        };
        let id: usize = id.parse().map_err(|_| bad())?;
        if id >= m {
            return Err(bad());
        }
        let toks = ann
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        match set {
            "observed" => observed[id].push(toks),
            "full" => {
                has_full = true;
                full[id].push(toks)
            }
            _ => return Err(bad()),
        }
    }
    Ok((observed, has_full.then_some(full)))
}

pub fn read_dataset<R: BufRead>(mut r: R) -> Result<SparseDataset> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h: DatasetHeader = serde_json::from_str(line.trim_end())?;
    if h.format != FORMAT {
        return Err(Error::invalid(format!("unknown dataset format {}", h.format)));
    }
    if h.splits.len() != h.m {
        return Err(Error::invalid("split list length differs from m"));
    }
    let features = read_f64s(&mut r, h.m * h.dims, "feature")?;
    for (row, chunk) in features.chunks(h.dims.max(1)).enumerate() {
        if chunk.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(format!("NaN feature in row {row}")));
        }
    }
    let mut csv = vec![0u8; h.annotations_bytes];
    r.read_exact(&mut csv)
        .map_err(|_| Error::invalid("annotation payload size mismatch"))?;
    let csv = String::from_utf8(csv).map_err(|_| Error::invalid("annotation CSV is not UTF-8"))?;
    let (observed, full) = parse_annotations(&csv, h.m)?;
    let posterior = if h.has_posterior {
        Some(Tensor::matrix(h.m, h.outputs, read_f64s(&mut r, h.m * h.outputs, "posterior")?)?)
    } else {
        None
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::invalid("payload size mismatch: trailing bytes"));
    }
    let ds = SparseDataset {
        kind: h.kind,
        generator: h.generator,
        config: h.config,
        seed: h.seed,
        features: Tensor::matrix(h.m, h.dims, features)?,
        regions: h.regions,
        outputs: h.outputs,
        observed,
        full,
        posterior,
        splits: h.splits,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(path: &Path, ds: &SparseDataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), ds)
}

pub fn load_dataset(path: &Path) -> Result<SparseDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
