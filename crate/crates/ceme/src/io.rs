//! File formats: dataset CSVs, JSON documents and raw tables. All writes are
//! atomic (temporary file in the target directory, then rename).

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ceme_core::data::Dataset;
use ceme_core::semisynth::RawTable;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().ok_or_else(|| anyhow!("no file name in {}", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Rows of string cells with a header, written through the csv writer.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow!("flushing csv: {e}"))?;
    write_atomic(path, &bytes)
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Header `z,x_star,x,y` for scalar `z`, else `z_1..z_d,x_star,x,y`.
/// `x_star` is left empty where the dataset has none.
pub fn dataset_header(z_dim: usize) -> Vec<String> {
    let mut h: Vec<String> = if z_dim == 1 {
        vec!["z".into()]
    } else {
        (1..=z_dim).map(|k| format!("z_{k}")).collect()
    };
    h.extend(["x_star", "x", "y"].map(String::from));
    h
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let header = dataset_header(d.z_dim);
    let rows: Vec<Vec<String>> = (0..d.len())
        .map(|i| {
            let mut r: Vec<String> = d.z_row(i).iter().map(|v| fmt_f64(*v)).collect();
            r.push(fmt_opt(d.x_star.as_ref().map(|xs| xs[i])));
            r.push(fmt_f64(d.x[i]));
            r.push(fmt_f64(d.y[i]));
            r
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &h, &rows)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let n_cols = headers.len();
    if n_cols < 4 || headers[n_cols - 3..] != ["x_star", "x", "y"] {
        bail!("{}: expected columns ending in x_star,x,y", path.display());
    }
    let z_dim = n_cols - 3;
    if headers[..z_dim] != dataset_header(z_dim)[..z_dim] {
        bail!("{}: unexpected covariate columns {:?}", path.display(), &headers[..z_dim]);
    }
    let (mut z, mut xs, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut has_xs = true;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().with_context(|| format!("{} row {}: column {}", path.display(), line + 2, headers[k]))
        };
        for k in 0..z_dim {
            z.push(num(k)?);
        }
        if rec[z_dim].is_empty() {
            has_xs = false;
        } else {
            xs.push(num(z_dim)?);
        }
        x.push(num(z_dim + 1)?);
        y.push(num(z_dim + 2)?);
    }
    if !has_xs && !xs.is_empty() {
        bail!("{}: x_star is only partly present", path.display());
    }
    Ok(Dataset::new(z_dim, z, has_xs.then_some(xs), x, y)?)
}

/// Numeric CSV with a header; empty cells and `NA`/`.` are missing.
pub fn read_raw_table(path: &Path) -> Result<RawTable> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(k, cell)| match cell {
                "" | "NA" | "." => Ok(None),
                s => s.parse::<f64>().map(Some).with_context(|| {
                    format!("{} row {}: column {}", path.display(), line + 2, headers[k])
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(RawTable { headers, rows })
}

pub fn write_raw_table(path: &Path, t: &RawTable) -> Result<()> {
    let h: Vec<&str> = t.headers.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(|c| fmt_opt(*c)).collect()).collect();
    write_csv(path, &h, &rows)
}
