//! Reader for the public predictive-maintenance layout: three headered CSV
//! files (telemetry, errors, failures) keyed by `machineID` and an hourly
//! `datetime` formatted `YYYY-MM-DD HH:MM:SS`.
//!
//! Telemetry channels are every telemetry column other than the two keys, in
//! source order. Error types are the distinct `errorID` values in sorted
//! order; each becomes one Boolean column. A timestamp is labelled 1 exactly
//! when the failures file lists it for that machine.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDateTime;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::OpenTimeSeries;
use crate::cost::Class;
use crate::error::{Error, Result};

const DATETIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Dataset-level totals, as reported for the public dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub num_series: usize,
    pub num_timestamps: usize,
    pub num_columns: usize,
    pub error_flags: usize,
    pub failure_timestamps: usize,
}

impl IngestSummary {
    pub fn of(series: &[OpenTimeSeries]) -> Self {
        Self {
            num_series: series.len(),
            num_timestamps: series.iter().map(OpenTimeSeries::len).sum(),
            num_columns: series
                .first()
                .map_or(0, |s| s.num_telemetry() + s.num_error_types() + 1),
            error_flags: series.iter().map(|s| s.errors().iter().filter(|&&f| f).count()).sum(),
            failure_timestamps: series
                .iter()
                .map(|s| s.labels().iter().filter(|&&c| c == Class::Positive).count())
                .sum(),
        }
    }
}

struct Table {
    headers: Vec<String>,
    /// (1-based line number, fields)
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    Ok(Table { headers, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

fn column(table: &Table, path: &Path, name: &str) -> Result<usize> {
    table
        .headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(path, 1, format!("missing column `{name}`")))
}

fn parse_datetime(path: &Path, line: usize, raw: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(raw, DATETIME_FORMAT)
        .map_err(|e| Error::parse(path, line, format!("bad datetime `{raw}`: {e}")))
}

fn parse_machine(path: &Path, line: usize, raw: &str) -> Result<u64> {
    raw.parse().map_err(|_| Error::parse(path, line, format!("bad machineID `{raw}`")))
}

struct Machine {
    start: NaiveDateTime,
    len: usize,
    series_index: usize,
}

impl Machine {
    fn hour_index(&self, path: &Path, line: usize, at: NaiveDateTime) -> Result<usize> {
        let delta = at - self.start;
        let secs = delta.num_seconds();
        if secs < 0 || secs % 3600 != 0 || (secs / 3600) as usize >= self.len {
            return Err(Error::parse(path, line, format!("timestamp {at} is not on the machine's hourly grid")));
        }
        Ok((secs / 3600) as usize)
    }
}

pub fn load_pdm_csv(
    telemetry_path: impl AsRef<Path>,
    errors_path: impl AsRef<Path>,
    failures_path: impl AsRef<Path>,
) -> Result<Vec<OpenTimeSeries>> {
    let (tel_path, err_path, fail_path) = (telemetry_path.as_ref(), errors_path.as_ref(), failures_path.as_ref());
    if std::fs::metadata(tel_path).map_err(|e| Error::io(tel_path, e))?.len() == 0 {
        return Ok(Vec::new());
    }
    let telemetry = read_table(tel_path)?;
    if telemetry.rows.is_empty() {
        return Ok(Vec::new());
    }

    let machine_col = column(&telemetry, tel_path, "machineID")?;
    let time_col = column(&telemetry, tel_path, "datetime")?;
    let channels: Vec<usize> =
        (0..telemetry.headers.len()).filter(|&c| c != machine_col && c != time_col).collect();
    if channels.is_empty() {
        return Err(Error::parse(tel_path, 1, "no telemetry channel columns"));
    }

    // machine -> rows sorted by time: (time, line, values)
    let mut by_machine: BTreeMap<u64, Vec<(NaiveDateTime, usize, Vec<f64>)>> = BTreeMap::new();
    for (line, fields) in &telemetry.rows {
        let line = *line;
        let machine = parse_machine(tel_path, line, &fields[machine_col])?;
        let at = parse_datetime(tel_path, line, &fields[time_col])?;
        let values = channels
            .iter()
            .map(|&c| {
                let raw = &fields[c];
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(tel_path, line, format!("bad value `{raw}` in `{}`", telemetry.headers[c])))
            })
            .collect::<Result<Vec<_>>>()?;
        by_machine.entry(machine).or_default().push((at, line, values));
    }

    let errors = read_table(err_path)?;
    let err_machine = column(&errors, err_path, "machineID")?;
    let err_time = column(&errors, err_path, "datetime")?;
    let err_id = column(&errors, err_path, "errorID")?;
    let error_types: Vec<&str> =
        errors.rows.iter().map(|(_, f)| f[err_id].as_str()).collect::<BTreeSet<_>>().into_iter().collect();

    let failures = read_table(fail_path)?;
    let fail_machine = column(&failures, fail_path, "machineID")?;
    let fail_time = column(&failures, fail_path, "datetime")?;

    let mut machines = BTreeMap::new();
    let mut series_parts = Vec::with_capacity(by_machine.len());
    for (series_index, (machine, mut rows)) in by_machine.into_iter().enumerate() {
        rows.sort_by_key(|r| r.0);
        for pair in rows.windows(2) {
            let gap = (pair[1].0 - pair[0].0).num_seconds();
            if gap != 3600 {
                return Err(Error::parse(
                    tel_path,
                    pair[1].1,
                    format!("machine {machine}: expected next hour after {}, found {} ", pair[0].0, pair[1].0),
                ));
            }
        }
        let len = rows.len();
        let mut tel = Array2::<f64>::zeros((len, channels.len()));
        for (t, (_, _, values)) in rows.iter().enumerate() {
            for (c, v) in values.iter().enumerate() {
                tel[[t, c]] = *v;
            }
        }
        machines.insert(machine, Machine { start: rows[0].0, len, series_index });
        series_parts.push((machine, tel, Array2::<bool>::default((len, error_types.len())), vec![Class::Negative; len]));
    }

    let lookup = |path: &Path, line: usize, raw: &str| -> Result<&Machine> {
        let id = parse_machine(path, line, raw)?;
        machines.get(&id).ok_or_else(|| Error::parse(path, line, format!("unknown machineID {id}")))
    };

    for (line, fields) in &errors.rows {
        let m = lookup(err_path, *line, &fields[err_machine])?;
        let at = parse_datetime(err_path, *line, &fields[err_time])?;
        let t = m.hour_index(err_path, *line, at)?;
        let k = error_types.binary_search(&fields[err_id].as_str()).expect("collected above");
        series_parts[m.series_index].2[[t, k]] = true;
    }
    for (line, fields) in &failures.rows {
        let m = lookup(fail_path, *line, &fields[fail_machine])?;
        let at = parse_datetime(fail_path, *line, &fields[fail_time])?;
        let t = m.hour_index(fail_path, *line, at)?;
        series_parts[m.series_index].3[t] = Class::Positive;
    }

    series_parts
        .into_iter()
        .map(|(machine, tel, errs, labels)| OpenTimeSeries::new(machine.to_string(), tel, errs, labels))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const TEL: &str = "machineID,datetime,volt,rotate,pressure,vibration\n\
        2,2015-01-01 06:00:00,1,2,3,4\n\
        1,2015-01-01 07:00:00,5,6,7,8\n\
        1,2015-01-01 06:00:00,1.5,2.5,3.5,4.5\n\
        2,2015-01-01 07:00:00,9,10,11,12\n\
        1,2015-01-01 08:00:00,0,0,0,0\n";

    #[test]
    fn joins_three_files_on_hourly_grid() {
        let dir = tempfile::tempdir().unwrap();
        let tel = write(dir.path(), "t.csv", TEL);
        let err = write(
            dir.path(),
            "e.csv",
            "machineID,datetime,errorID\n1,2015-01-01 07:00:00,error3\n2,2015-01-01 06:00:00,error1\n1,2015-01-01 07:00:00,error1\n",
        );
        let fail = write(dir.path(), "f.csv", "machineID,datetime,failure\n1,2015-01-01 08:00:00,comp2\n");
        let series = load_pdm_csv(&tel, &err, &fail).unwrap();
        assert_eq!(series.len(), 2);
        let m1 = &series[0];
        assert_eq!(m1.id(), "1");
        assert_eq!(m1.len(), 3);
        assert_eq!(m1.telemetry().row(0).to_vec(), vec![1.5, 2.5, 3.5, 4.5]);
        assert_eq!(m1.num_error_types(), 2);
        assert_eq!(m1.errors().row(1).to_vec(), vec![true, true]);
        assert_eq!(m1.labels(), &[Class::Negative, Class::Negative, Class::Positive]);
        assert_eq!(series[1].errors().row(0).to_vec(), vec![true, false]);

        let summary = IngestSummary::of(&series);
        assert_eq!(summary.num_series, 2);
        assert_eq!(summary.num_timestamps, 5);
        assert_eq!(summary.num_columns, 7);
        assert_eq!(summary.error_flags, 3);
        assert_eq!(summary.failure_timestamps, 1);
    }

    #[test]
    fn empty_telemetry_gives_empty_set() {
        let dir = tempfile::tempdir().unwrap();
        let tel = write(dir.path(), "t.csv", "");
        let err = write(dir.path(), "e.csv", "");
        let fail = write(dir.path(), "f.csv", "");
        assert!(load_pdm_csv(&tel, &err, &fail).unwrap().is_empty());
        let tel = write(dir.path(), "t2.csv", "machineID,datetime,volt\n");
        assert!(load_pdm_csv(&tel, &err, &fail).unwrap().is_empty());
    }

    fn expect_parse_error(tel: &str, err: &str, fail: &str, line: usize) {
        let dir = tempfile::tempdir().unwrap();
        let t = write(dir.path(), "t.csv", tel);
        let e = write(dir.path(), "e.csv", err);
        let f = write(dir.path(), "f.csv", fail);
        match load_pdm_csv(&t, &e, &f) {
            Err(Error::Parse { line: got, .. }) => assert_eq!(got, line),
            other => panic!("expected parse error at line {line}, got {other:?}"),
        }
    }

    #[test]
    fn reports_row_numbers() {
        let no_err = "machineID,datetime,errorID\n";
        let no_fail = "machineID,datetime,failure\n";
        // malformed value
        expect_parse_error("machineID,datetime,volt\n1,2015-01-01 06:00:00,abc\n", no_err, no_fail, 2);
        // gap in the hourly grid
        expect_parse_error(
            "machineID,datetime,volt\n1,2015-01-01 06:00:00,1\n1,2015-01-01 08:00:00,1\n",
            no_err,
            no_fail,
            3,
        );
        // unknown machine in the errors file
        expect_parse_error(TEL, "machineID,datetime,errorID\n1,2015-01-01 06:00:00,error1\n7,2015-01-01 06:00:00,error1\n", no_fail, 3);
        // off-grid failure
        expect_parse_error(TEL, no_err, "machineID,datetime,failure\n1,2015-01-01 06:30:00,comp1\n", 2);
        // bad datetime
        expect_parse_error("machineID,datetime,volt\n1,2015/01/01,1\n", no_err, no_fail, 2);
    }
}
