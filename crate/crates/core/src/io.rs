//! CSV and file helpers shared by the dataset, field and history writers.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::problem::GridField;

/// 17 significant digits in scientific notation, enough to round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a numeric CSV whose header must equal `header` exactly.
pub fn parse_csv<R: BufRead>(input: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(str::trim)
        .collect::<Vec<_>>();
    if found != header {
        return Err(Error::Format(format!(
            "expected header `{}`, found `{}`",
            header.join(","),
            found.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        let row = record
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("row {}: bad number `{s}`", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `z,t,p_ratio` rows, time outer and depth inner.
pub fn write_field_csv<W: Write>(field: &GridField, mut out: W) -> Result<()> {
    writeln!(out, "z,t,p_ratio")?;
    for (depth, t, v) in field.iter() {
        writeln!(out, "{},{},{}", fmt_f64(depth), fmt_f64(t), fmt_f64(v))?;
    }
    Ok(())
}

/// Reads a field written by [`write_field_csv`], recovering the grid from
/// the row layout.
pub fn read_field_csv<R: BufRead>(input: R) -> Result<GridField> {
    let rows = parse_csv(input, &["z", "t", "p_ratio"])?;
    if rows.is_empty() {
        return Err(Error::Format("empty field".into()));
    }
    let t0 = rows[0][1];
    let n_z = rows.iter().take_while(|r| r[1] == t0).count();
    if rows.len() % n_z != 0 {
        return Err(Error::Format(format!(
            "{} rows do not form complete time slices of {n_z}",
            rows.len()
        )));
    }
    let n_t = rows.len() / n_z;
    let depths: Vec<f64> = rows[..n_z].iter().map(|r| r[0]).collect();
    let times: Vec<f64> = (0..n_t).map(|it| rows[it * n_z][1]).collect();
    for (i, r) in rows.iter().enumerate() {
        if r[0] != depths[i % n_z] || r[1] != times[i / n_z] {
            return Err(Error::Format(format!("row {} breaks the grid layout", i + 1)));
        }
    }
    Ok(GridField {
        depths,
        times,
        values: rows.into_iter().map(|r| r[2]).collect(),
    })
}

/// Writes via a sibling temporary file and a rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => tmp_name.into(),
    };
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
