//! Native dataset format: one headered CSV per split with columns
//! `series_id, t, tel_1..tel_p, err_1..err_e, label`.
//!
//! `t` runs from 1 within each series. Reals use the shortest representation
//! that parses back to the same `f64`, so a write/read cycle is bit-exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::{common_layout, OpenTimeSeries};
use crate::cost::Class;
use crate::error::{Error, Result};

pub fn write_native_csv(path: impl AsRef<Path>, series_set: &[OpenTimeSeries]) -> Result<()> {
    let path = path.as_ref();
    let layout = common_layout(series_set)?;
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);

    let mut header = vec!["series_id".to_owned(), "t".to_owned()];
    if let Some(l) = layout {
        header.extend((1..=l.num_telemetry).map(|c| format!("tel_{c}")));
        header.extend((1..=l.num_error_types).map(|k| format!("err_{k}")));
    }
    header.push("label".to_owned());
    writeln!(out, "{}", header.join(",")).map_err(io)?;

    let mut line = String::new();
    for s in series_set {
        if s.id().contains([',', '"', '\n']) {
            return Err(Error::InvalidConfig(format!("series id `{}` contains a CSV delimiter", s.id())));
        }
        for t in 0..s.len() {
            line.clear();
            line.push_str(s.id());
            line.push(',');
            line.push_str(&(t + 1).to_string());
            for v in s.telemetry().row(t) {
                line.push(',');
                line.push_str(&v.to_string());
            }
            for &f in s.errors().row(t) {
                line.push_str(if f { ",1" } else { ",0" });
            }
            line.push(',');
            line.push_str(&s.label(t + 1).to_string());
            writeln!(out, "{line}").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_native_csv(path: impl AsRef<Path>) -> Result<Vec<OpenTimeSeries>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 3 || names[0] != "series_id" || names[1] != "t" || names[names.len() - 1] != "label" {
        return Err(Error::parse(path, 1, "expected header `series_id,t,...,label`"));
    }
    let middle = &names[2..names.len() - 1];
    let p = middle.iter().take_while(|n| n.starts_with("tel_")).count();
    let e = middle.len() - p;
    if middle[p..].iter().any(|n| !n.starts_with("err_")) {
        return Err(Error::parse(path, 1, "telemetry columns must precede error columns"));
    }

    struct Pending {
        id: String,
        tel: Vec<f64>,
        err: Vec<bool>,
        labels: Vec<Class>,
    }
    let finish = |pending: Pending| -> Result<OpenTimeSeries> {
        let len = pending.labels.len();
        let shape_err = |e: ndarray::ShapeError| Error::Invariant(e.to_string());
        OpenTimeSeries::new(
            pending.id,
            Array2::from_shape_vec((len, p), pending.tel).map_err(shape_err)?,
            Array2::from_shape_vec((len, e), pending.err).map_err(shape_err)?,
            pending.labels,
        )
    };

    let mut out = Vec::new();
    let mut current: Option<Pending> = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::parse(path, line, msg);
        let id = &record[0];
        let t: usize = record[1].parse().map_err(|_| bad(format!("bad t `{}`", &record[1])))?;

        if current.as_ref().is_none_or(|c| c.id != id) {
            if let Some(done) = current.take() {
                if out.iter().any(|s: &OpenTimeSeries| s.id() == id) {
                    return Err(bad(format!("series `{id}` is not contiguous")));
                }
                out.push(finish(done)?);
            }
            current = Some(Pending { id: id.to_owned(), tel: Vec::new(), err: Vec::new(), labels: Vec::new() });
        }
        let cur = current.as_mut().expect("set above");
        if t != cur.labels.len() + 1 {
            return Err(bad(format!("series `{id}`: expected t={}, found {t}", cur.labels.len() + 1)));
        }
        for c in 0..p {
            let raw = &record[2 + c];
            cur.tel.push(raw.parse().map_err(|_| bad(format!("bad telemetry value `{raw}`")))?);
        }
        for k in 0..e {
            cur.err.push(match &record[2 + p + k] {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("bad error flag `{other}`"))),
            });
        }
        let label = match &record[2 + p + e] {
            "0" => Class::Negative,
            "1" => Class::Positive,
            other => return Err(bad(format!("bad label `{other}`"))),
        };
        cur.labels.push(label);
    }
    if let Some(done) = current {
        out.push(finish(done)?);
    }
    Ok(out)
}
