//! CSV serialization of datasets, truth sidecars and score sets.
//!
//! Dataset files carry the header `x0..x{d-1},t,y,batch`, optionally followed
//! by `flag` and by `f_true,tau_true`. Floats are written in Rust's shortest
//! round-trip form, so writing the same data twice yields identical bytes.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset, Truth};
use crate::error::{Error, Result};

/// Design-level metadata stored next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub batch_propensities: Vec<f64>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes `data`; truth columns are appended when `include_truth` is set and
/// truth is present.
pub fn write_dataset<W: Write>(data: &Dataset, include_truth: bool, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = data.d();
    let truth = data.truth.as_ref().filter(|_| include_truth);
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.extend(["t", "y", "batch"].map(String::from));
    if data.flag.is_some() {
        header.push("flag".into());
    }
    if truth.is_some() {
        header.extend(["f_true", "tau_true"].map(String::from));
    }
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        rec.clear();
        rec.extend(data.covariates.row(i).iter().map(|&v| fmt_f64(v)));
        rec.push(data.treatment[i].to_string());
        rec.push(data.outcome[i].to_string());
        rec.push(data.batch[i].to_string());
        if let Some(flag) = &data.flag {
            rec.push(flag[i].to_string());
        }
        if let Some(t) = truth {
            rec.push(fmt_f64(t.baseline[i]));
            rec.push(fmt_f64(t.cate[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, row: usize, col: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::InvalidData(format!("row {row}, column {col}: cannot parse `{s}`")))
}

/// Reads a dataset CSV. Batch propensities come from `design` when given and
/// otherwise from the empirical treated share of each batch.
pub fn read_dataset<R: Read>(reader: R, design: Option<&DesignFile>) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let pos = |name: &str| header.iter().position(|h| h == name);
    let mut x_cols = Vec::new();
    while let Some(p) = pos(&format!("x{}", x_cols.len())) {
        x_cols.push(p);
    }
    let need = |name: &str| pos(name).ok_or_else(|| Error::InvalidData(format!("missing column `{name}`")));
    let (t_col, y_col, b_col) = (need("t")?, need("y")?, need("batch")?);
    let flag_col = pos("flag");
    let truth_cols = match (pos("f_true"), pos("tau_true")) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(Error::InvalidData("f_true and tau_true must appear together".into())),
    };
    let known = x_cols.len() + 3 + usize::from(flag_col.is_some()) + 2 * usize::from(truth_cols.is_some());
    if known != header.len() {
        return Err(Error::InvalidData(format!("unexpected columns in header {header:?}")));
    }

    let mut values = Vec::new();
    let (mut t, mut y, mut batch, mut flag) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut f_true, mut tau_true) = (Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        for (j, &c) in x_cols.iter().enumerate() {
            values.push(parse::<f64>(&rec[c], row, &format!("x{j}"))?);
        }
        t.push(parse::<u8>(&rec[t_col], row, "t")?);
        y.push(parse::<u8>(&rec[y_col], row, "y")?);
        batch.push(parse::<u32>(&rec[b_col], row, "batch")?);
        if let Some(c) = flag_col {
            flag.push(parse::<u8>(&rec[c], row, "flag")?);
        }
        if let Some((a, b)) = truth_cols {
            f_true.push(parse::<f64>(&rec[a], row, "f_true")?);
            tau_true.push(parse::<f64>(&rec[b], row, "tau_true")?);
        }
    }
    let n = t.len();
    if n == 0 {
        return Err(Error::InvalidData("dataset has no rows".into()));
    }
    let covariates = Covariates::new(n, x_cols.len(), values)?;
    let n_batches = batch.iter().map(|&b| b as usize + 1).max().unwrap_or(1);
    let placeholder = vec![0.5; n_batches];
    let mut data = Dataset::new(covariates, t, y, batch, placeholder)?;
    data.design_propensity = match design {
        Some(d) => d.batch_propensities.clone(),
        None => data.empirical_propensities(),
    };
    if flag_col.is_some() {
        data.flag = Some(flag);
    }
    if truth_cols.is_some() {
        data.truth = Some(Truth { baseline: f_true, cate: tau_true });
    }
    data.validate()?;
    Ok(data)
}

/// Writes the truth sidecar `unit,f_true,tau_true`.
pub fn write_truth<W: Write>(truth: &Truth, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit", "f_true", "tau_true"])?;
    for i in 0..truth.baseline.len() {
        w.write_record([i.to_string(), fmt_f64(truth.baseline[i]), fmt_f64(truth.cate[i])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth<R: Read>(reader: R) -> Result<Truth> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != ["unit", "f_true", "tau_true"] {
        return Err(Error::InvalidData(format!("unexpected truth header {header:?}")));
    }
    let mut truth = Truth { baseline: Vec::new(), cate: Vec::new() };
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if parse::<usize>(&rec[0], row, "unit")? != row {
            return Err(Error::InvalidData(format!("truth row {row} out of order")));
        }
        truth.baseline.push(parse(&rec[1], row, "f_true")?);
        truth.cate.push(parse(&rec[2], row, "tau_true")?);
    }
    Ok(truth)
}

pub fn write_dataset_file(path: &Path, data: &Dataset, include_truth: bool) -> Result<()> {
    write_dataset(data, include_truth, File::create(path)?)
}

pub fn read_dataset_file(path: &Path, design: Option<&DesignFile>) -> Result<Dataset> {
    read_dataset(File::open(path)?, design)
}
