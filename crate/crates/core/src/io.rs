//! Plain-text file formats: grid functions, samples, masks and key:value
//! reports.
//!
//! Grid functions are stored as
//!
//! ```text
//! # d=1 n=1024 ds=0.0390625 domain=frequency hermitian=true
//! i1,re,im
//! -512,1,0
//! ```
//!
//! with one row per grid point in storage order and centred integer offsets.
//! Floats are written in shortest round-trip form, so a write/read cycle is
//! lossless.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::{Domain, Grid, GridFn, C64};
use crate::moments::Sample;
use crate::support::SupportMask;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

impl IoError {
    fn format(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => IoError::format(path, line, format!("{kind:?}")),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, IoError> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(io_err(path))?,
    ))
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64, IoError> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| IoError::format(path, line, format!("not a number: `{field}`")))
}

pub fn write_gridfn(path: &Path, f: &GridFn) -> Result<(), IoError> {
    let grid = f.grid();
    let mut w = create(path)?;
    let domain = if grid.is_frequency() {
        "frequency"
    } else {
        "space"
    };
    let mut body = format!(
        "# d={} n={} ds={} domain={} hermitian={}\n",
        grid.dim(),
        grid.points_per_dim(),
        grid.step(),
        domain,
        f.is_hermitian()
    );
    let names: Vec<String> = (1..=grid.dim()).map(|k| format!("i{k}")).collect();
    body.push_str(&names.join(","));
    body.push_str(",re,im\n");
    for i in 0..grid.len() {
        for a in 0..grid.dim() {
            body.push_str(&grid.offset(i, a).to_string());
            body.push(',');
        }
        let v = f.value(i);
        body.push_str(&format!("{},{}\n", v.re, v.im));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_gridfn(path: &Path) -> Result<GridFn, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| IoError::format(path, 1, "empty file"))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| IoError::format(path, 1, "missing `# d= n= ds=` header"))?;
    let (mut d, mut n, mut ds, mut domain, mut herm) = (None, None, None, Domain::Frequency, false);
    for item in header.split_whitespace() {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| IoError::format(path, 1, format!("bad item `{item}`")))?;
        match k {
            "d" => d = v.parse::<usize>().ok(),
            "n" => n = v.parse::<usize>().ok(),
            "ds" => ds = v.parse::<f64>().ok(),
            "domain" => {
                domain = match v {
                    "frequency" => Domain::Frequency,
                    "space" => Domain::Space,
                    _ => return Err(IoError::format(path, 1, format!("unknown domain `{v}`"))),
                }
            }
            "hermitian" => herm = v == "true",
            _ => {
                return Err(IoError::format(
                    path,
                    1,
                    format!("unknown header key `{k}`"),
                ))
            }
        }
    }
    let (d, n, ds) = match (d, n, ds) {
        (Some(d), Some(n), Some(ds)) => (d, n, ds),
        _ => return Err(IoError::format(path, 1, "header needs d, n and ds")),
    };
    let grid =
        Grid::from_parts(d, n, ds, domain).map_err(|e| IoError::format(path, 1, e.to_string()))?;
    lines
        .next()
        .ok_or_else(|| IoError::format(path, 2, "missing column header"))?;
    let mut values = vec![C64::new(0.0, 0.0); grid.len()];
    let mut seen = vec![false; grid.len()];
    for (k, line) in lines.enumerate() {
        let lineno = k + 3;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(IoError::format(
                path,
                lineno,
                format!("expected {} fields", d + 2),
            ));
        }
        let offsets: Vec<isize> = fields[..d]
            .iter()
            .map(|f| f.trim().parse::<isize>())
            .collect::<Result<_, _>>()
            .map_err(|_| IoError::format(path, lineno, "bad index"))?;
        let idx = grid
            .index_of_offsets(&offsets)
            .ok_or_else(|| IoError::format(path, lineno, "index outside the grid"))?;
        values[idx] = C64::new(
            parse_f64(path, lineno, fields[d])?,
            parse_f64(path, lineno, fields[d + 1])?,
        );
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(IoError::format(
            path,
            0,
            format!("grid point {missing} missing"),
        ));
    }
    let f = GridFn::new(grid.clone(), values.clone(), false)
        .map_err(|e| IoError::format(path, 0, e.to_string()))?;
    if herm {
        return GridFn::new(grid, values, true)
            .map_err(|e| IoError::format(path, 0, e.to_string()));
    }
    Ok(f)
}

/// Column names `z1..zd[,x1..xd][,y][,y2]`.
pub fn sample_header(s: &Sample) -> Vec<String> {
    let d = s.dim();
    let mut h: Vec<String> = (1..=d).map(|k| format!("z{k}")).collect();
    if s.x().is_some() {
        h.extend((1..=d).map(|k| format!("x{k}")));
    }
    if s.y().is_some() {
        h.push("y".into());
    }
    if s.y2().is_some() {
        h.push("y2".into());
    }
    h
}

pub fn write_sample(path: &Path, s: &Sample) -> Result<(), IoError> {
    let d = s.dim();
    let mut rows = Vec::with_capacity(s.len());
    for j in 0..s.len() {
        let mut r: Vec<f64> = s.z()[j * d..(j + 1) * d].to_vec();
        if let Some(x) = s.x() {
            r.extend_from_slice(&x[j * d..(j + 1) * d]);
        }
        if let Some(y) = s.y() {
            r.push(y[j]);
        }
        if let Some(y2) = s.y2() {
            r.push(y2[j]);
        }
        rows.push(r);
    }
    write_table(path, &sample_header(s), &rows)
}

pub fn read_sample(path: &Path) -> Result<Sample, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let d = (1..)
        .take_while(|k| col(&format!("z{k}")).is_some())
        .count();
    if d == 0 {
        return Err(IoError::format(path, 1, "no z1 column"));
    }
    let zc: Vec<usize> = (1..=d)
        .map(|k| col(&format!("z{k}")).expect("counted"))
        .collect();
    let xc: Option<Vec<usize>> = (1..=d).map(|k| col(&format!("x{k}"))).collect();
    let (yc, y2c) = (col("y"), col("y2"));
    let known = d + xc.as_ref().map_or(0, |_| d) + yc.is_some() as usize + y2c.is_some() as usize;
    if known != header.len() {
        return Err(IoError::format(
            path,
            1,
            format!("unexpected columns in `{}`", header.join(",")),
        ));
    }
    let (mut z, mut x, mut y, mut y2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let get = |c: usize| parse_f64(path, line, rec.get(c).unwrap_or(""));
        for &c in &zc {
            z.push(get(c)?);
        }
        if let Some(xc) = &xc {
            for &c in xc {
                x.push(get(c)?);
            }
        }
        if let Some(c) = yc {
            y.push(get(c)?);
        }
        if let Some(c) = y2c {
            y2.push(get(c)?);
        }
    }
    Sample::new(d, z, xc.map(|_| x), yc.map(|_| y), y2c.map(|_| y2))
        .map_err(|e| IoError::format(path, 0, e.to_string()))
}

/// A numeric table with a header row.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut w = create(path)?;
    let mut body = header.join(",");
    body.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        body.push_str(&cells.join(","));
        body.push('\n');
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Columns `i1..id, in_mask, component_id` (`-1` off the mask).
pub fn write_mask(path: &Path, mask: &SupportMask) -> Result<(), IoError> {
    let grid = mask.grid();
    let mut w = create(path)?;
    let mut body: String = (1..=grid.dim()).map(|k| format!("i{k},")).collect();
    body.push_str("in_mask,component_id\n");
    for i in 0..grid.len() {
        for a in 0..grid.dim() {
            body.push_str(&grid.offset(i, a).to_string());
            body.push(',');
        }
        let label = mask.label(i).map_or(-1, |l| l as i64);
        body.push_str(&format!("{},{}\n", mask.contains(i) as u8, label));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_report(path: &Path, entries: &[(String, String)]) -> Result<(), IoError> {
    let mut w = create(path)?;
    for (k, v) in entries {
        writeln!(w, "{k}: {v}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_report(path: &Path) -> Result<Vec<(String, String)>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once(':')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| IoError::format(path, i + 1, "expected `key: value`"))
        })
        .collect()
}
