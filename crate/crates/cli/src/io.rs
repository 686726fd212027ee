//! File formats: CSV with a header row and floats at 17 significant
//! digits, and JSON lines for the per-step log.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ares_core::{StepOutput, Trajectory, Vector};

use crate::error::{CliError, CliResult};

/// `{:.16e}`: one digit before the point and sixteen after, which round-trips
/// every finite `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(path: &Path, line: usize, field: &str) -> CliResult<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| CliError::input(path, format!("line {line}: `{field}` is not a number")))
}

fn parse_bool(path: &Path, line: usize, field: &str) -> CliResult<bool> {
    field
        .trim()
        .parse()
        .map_err(|_| CliError::input(path, format!("line {line}: `{field}` is not a boolean")))
}

fn parse_usize(path: &Path, line: usize, field: &str) -> CliResult<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| CliError::input(path, format!("line {line}: `{field}` is not an integer")))
}

/// Writes a header and rows of preformatted fields.
pub fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::input(path, e))?;
    w.write_record(header)
        .map_err(|e| CliError::input(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::input(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a CSV into its header and records.
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::input(path, e))?;
    let header = r
        .headers()
        .map_err(|e| CliError::input(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = r
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::input(path, e))?;
    Ok((header, rows))
}

const TRAJECTORY_BLOCKS: [&str; 6] = ["x", "u", "d", "y", "w", "v"];

fn trajectory_blocks(t: &Trajectory, k: usize) -> [&Vector; 6] {
    [&t.x[k], &t.u[k], &t.d[k], &t.y[k], &t.w[k], &t.v[k]]
}

/// Columns `k, x0.., u0.., d0.., y0.., w0.., v0..`.
pub fn write_trajectory(path: &Path, t: &Trajectory) -> CliResult<()> {
    let mut header = vec!["k".to_string()];
    if !t.is_empty() {
        for (name, block) in TRAJECTORY_BLOCKS.iter().zip(trajectory_blocks(t, 0)) {
            header.extend((0..block.len()).map(|i| format!("{name}{i}")));
        }
    }
    let rows = (0..t.len()).map(|k| {
        let mut row = vec![k.to_string()];
        for block in trajectory_blocks(t, k) {
            row.extend(block.iter().map(|&v| fmt_f64(v)));
        }
        row
    });
    write_csv(path, &header, rows)
}

pub fn read_trajectory(path: &Path, seed: u64) -> CliResult<Trajectory> {
    let (header, rows) = read_csv(path)?;
    if header.first().map(String::as_str) != Some("k") {
        return Err(CliError::input(path, "first column must be `k`"));
    }
    // Column ranges per block, in the fixed order.
    let mut ranges = Vec::new();
    let mut col = 1;
    for name in TRAJECTORY_BLOCKS {
        let start = col;
        while col < header.len() && header[col] == format!("{name}{}", col - start) {
            col += 1;
        }
        ranges.push(start..col);
    }
    if col != header.len() {
        return Err(CliError::input(
            path,
            format!("unexpected column `{}`", header[col]),
        ));
    }
    let mut t = Trajectory {
        seed,
        x: vec![],
        u: vec![],
        d: vec![],
        y: vec![],
        w: vec![],
        v: vec![],
    };
    for (i, row) in rows.iter().enumerate() {
        let line = i + 2;
        if row.len() != header.len() {
            return Err(CliError::input(
                path,
                format!("line {line}: expected {} fields", header.len()),
            ));
        }
        if parse_usize(path, line, &row[0])? != i {
            return Err(CliError::input(
                path,
                format!("line {line}: steps must be numbered 0, 1, 2, …"),
            ));
        }
        let mut blocks = Vec::with_capacity(6);
        for r in &ranges {
            let vals = r
                .clone()
                .map(|c| parse_f64(path, line, &row[c]))
                .collect::<CliResult<Vec<_>>>()?;
            blocks.push(Vector::from_vec(vals));
        }
        let mut it = blocks.into_iter();
        let mut next = || it.next().unwrap_or_else(|| Vector::zeros(0));
        t.x.push(next());
        t.u.push(next());
        t.d.push(next());
        t.y.push(next());
        t.w.push(next());
        t.v.push(next());
    }
    Ok(t)
}

/// One row of the metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub k: usize,
    pub err_x: f64,
    pub err_x_u: f64,
    pub err_d: f64,
    pub err_d_u: f64,
    pub trace_p_x: f64,
    pub trace_p_xu: f64,
    pub trace_p_d: f64,
    pub trace_p_du: f64,
    pub chi2: f64,
    pub attacked: bool,
    pub active_d: usize,
    pub active_x: usize,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 13] = [
        "k",
        "err_x",
        "err_x_u",
        "err_d",
        "err_d_u",
        "trace_p_x",
        "trace_p_xu",
        "trace_p_d",
        "trace_p_du",
        "chi2",
        "attacked",
        "active_d",
        "active_x",
    ];

    fn record(&self) -> Vec<String> {
        let mut r = vec![self.k.to_string()];
        r.extend(
            [
                self.err_x,
                self.err_x_u,
                self.err_d,
                self.err_d_u,
                self.trace_p_x,
                self.trace_p_xu,
                self.trace_p_d,
                self.trace_p_du,
                self.chi2,
            ]
            .map(fmt_f64),
        );
        r.push(self.attacked.to_string());
        r.push(self.active_d.to_string());
        r.push(self.active_x.to_string());
        r
    }

    fn parse(path: &Path, line: usize, rec: &csv::StringRecord) -> CliResult<Self> {
        if rec.len() != Self::HEADER.len() {
            return Err(CliError::input(
                path,
                format!("line {line}: expected {} fields", Self::HEADER.len()),
            ));
        }
        let f = |i: usize| parse_f64(path, line, &rec[i]);
        Ok(MetricsRow {
            k: parse_usize(path, line, &rec[0])?,
            err_x: f(1)?,
            err_x_u: f(2)?,
            err_d: f(3)?,
            err_d_u: f(4)?,
            trace_p_x: f(5)?,
            trace_p_xu: f(6)?,
            trace_p_d: f(7)?,
            trace_p_du: f(8)?,
            chi2: f(9)?,
            attacked: parse_bool(path, line, &rec[10])?,
            active_d: parse_usize(path, line, &rec[11])?,
            active_x: parse_usize(path, line, &rec[12])?,
        })
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> CliResult<()> {
    write_csv(
        path,
        &header(&MetricsRow::HEADER),
        rows.iter().map(MetricsRow::record),
    )
}

pub fn read_metrics(path: &Path) -> CliResult<Vec<MetricsRow>> {
    let (head, rows) = read_csv(path)?;
    if head != header(&MetricsRow::HEADER) {
        return Err(CliError::input(path, "unexpected metrics header"));
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| MetricsRow::parse(path, i + 2, r))
        .collect()
}

/// χ² decisions on the projected and on the unprojected attack estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub k: usize,
    pub dof: usize,
    pub alpha: f64,
    pub threshold: f64,
    pub statistic: f64,
    pub attacked: bool,
    pub degenerate: bool,
    pub statistic_u: f64,
    pub attacked_u: bool,
}

impl DetectionRow {
    pub const HEADER: [&'static str; 9] = [
        "k",
        "dof",
        "alpha",
        "threshold",
        "statistic",
        "attacked",
        "degenerate",
        "statistic_u",
        "attacked_u",
    ];

    fn record(&self) -> Vec<String> {
        vec![
            self.k.to_string(),
            self.dof.to_string(),
            fmt_f64(self.alpha),
            fmt_f64(self.threshold),
            fmt_f64(self.statistic),
            self.attacked.to_string(),
            self.degenerate.to_string(),
            fmt_f64(self.statistic_u),
            self.attacked_u.to_string(),
        ]
    }

    fn parse(path: &Path, line: usize, rec: &csv::StringRecord) -> CliResult<Self> {
        if rec.len() != Self::HEADER.len() {
            return Err(CliError::input(
                path,
                format!("line {line}: expected {} fields", Self::HEADER.len()),
            ));
        }
        Ok(DetectionRow {
            k: parse_usize(path, line, &rec[0])?,
            dof: parse_usize(path, line, &rec[1])?,
            alpha: parse_f64(path, line, &rec[2])?,
            threshold: parse_f64(path, line, &rec[3])?,
            statistic: parse_f64(path, line, &rec[4])?,
            attacked: parse_bool(path, line, &rec[5])?,
            degenerate: parse_bool(path, line, &rec[6])?,
            statistic_u: parse_f64(path, line, &rec[7])?,
            attacked_u: parse_bool(path, line, &rec[8])?,
        })
    }
}

pub fn write_detection(path: &Path, rows: &[DetectionRow]) -> CliResult<()> {
    write_csv(
        path,
        &header(&DetectionRow::HEADER),
        rows.iter().map(DetectionRow::record),
    )
}

pub fn read_detection(path: &Path) -> CliResult<Vec<DetectionRow>> {
    let (head, rows) = read_csv(path)?;
    if head != header(&DetectionRow::HEADER) {
        return Err(CliError::input(path, "unexpected detection header"));
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| DetectionRow::parse(path, i + 2, r))
        .collect()
}

/// One JSON object per line.
pub fn write_steps(path: &Path, steps: &[StepOutput]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in steps {
        serde_json::to_writer(&mut w, s).map_err(|e| CliError::input(path, e))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_steps(path: &Path) -> CliResult<Vec<StepOutput>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut steps = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&line)
            .map_err(|e| CliError::input(path, format!("line {}: {e}", i + 1)))?;
        steps.push(s);
    }
    Ok(steps)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
