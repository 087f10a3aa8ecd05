//! CSV run logs.
//!
//! One header line, then one row per controller period. Floats are written
//! with 17 significant digits so a log reproduces the run bit for bit. Rows
//! are flushed as they are written, so an interrupted run leaves a valid
//! prefix; a trailing partial line is ignored on read.
//!
//! Columns: `time`, `x_<state>...`, `nom_<input>...`, `u_<input>...`, `H`,
//! `t_star`, `hv_<boxed state>...`, `distance`, `input_violation`,
//! `fallback`, `best_effort`, `active`, `solve_ms`, and with diagnostics
//! enabled `margin`, `membership`, `switching`, `truncated`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::filter::Membership;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogLayout {
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    /// Names of the boxed velocity states.
    pub boxed: Vec<String>,
    pub diagnostics: bool,
}

impl LogLayout {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["time".to_string()];
        h.extend(self.states.iter().map(|s| format!("x_{s}")));
        h.extend(self.inputs.iter().map(|s| format!("nom_{s}")));
        h.extend(self.inputs.iter().map(|s| format!("u_{s}")));
        h.push("H".into());
        h.push("t_star".into());
        h.extend(self.boxed.iter().map(|s| format!("hv_{s}")));
        for c in ["distance", "input_violation", "fallback", "best_effort", "active", "solve_ms"] {
            h.push(c.into());
        }
        if self.diagnostics {
            for c in ["margin", "membership", "switching", "truncated"] {
                h.push(c.into());
            }
        }
        h
    }

    fn parse(header: &[&str]) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig {
            field: "log header".into(),
            message: msg,
        };
        if header.first() != Some(&"time") {
            return Err(bad("first column must be 'time'".into()));
        }
        let names = |prefix: &str| -> Vec<String> {
            header.iter().filter_map(|c| c.strip_prefix(prefix)).map(str::to_string).collect()
        };
        let layout = Self {
            states: names("x_"),
            inputs: names("u_"),
            boxed: names("hv_"),
            diagnostics: header.contains(&"margin"),
        };
        if layout.header() != header {
            return Err(bad(format!("unexpected column layout: {}", header.join(","))));
        }
        Ok(layout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// `alpha(-H) - H'` at the applied input.
    pub margin: f64,
    pub membership: Membership,
    pub switching: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub time: f64,
    pub state: Vec<f64>,
    pub nominal: Vec<f64>,
    pub input: Vec<f64>,
    /// `H_r` of the active controller's barrier.
    pub zcbf: f64,
    pub t_star: f64,
    /// `h_{v_i}` against the scenario's velocity boxes.
    pub rd1: Vec<f64>,
    pub distance: f64,
    /// Largest excursion of the applied input outside its bounds.
    pub input_violation: f64,
    pub fallback: bool,
    pub best_effort: bool,
    pub active: u64,
    /// Seconds spent in the filter, including the barrier evaluation.
    pub solve_time: f64,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub layout: LogLayout,
    pub rows: Vec<LogRow>,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn membership_name(m: Membership) -> &'static str {
    match m {
        Membership::Inside => "inside",
        Membership::Boundary => "boundary",
        Membership::Outside => "outside",
    }
}

impl LogRow {
    fn fields(&self) -> Vec<String> {
        let mut f = vec![num(self.time)];
        f.extend(self.state.iter().map(|x| num(*x)));
        f.extend(self.nominal.iter().map(|x| num(*x)));
        f.extend(self.input.iter().map(|x| num(*x)));
        f.push(num(self.zcbf));
        f.push(num(self.t_star));
        f.extend(self.rd1.iter().map(|x| num(*x)));
        f.push(num(self.distance));
        f.push(num(self.input_violation));
        f.push(flag(self.fallback).into());
        f.push(flag(self.best_effort).into());
        f.push(self.active.to_string());
        f.push(num(self.solve_time * 1e3));
        if let Some(d) = &self.diagnostics {
            f.push(num(d.margin));
            f.push(membership_name(d.membership).into());
            f.push(flag(d.switching).into());
            f.push(flag(d.truncated).into());
        }
        f
    }

    fn parse(layout: &LogLayout, record: &csv::StringRecord) -> Result<Self> {
        let mut cur = Cursor(record.iter());
        let time = cur.float("time")?;
        let state = layout.states.iter().map(|s| cur.float(s)).collect::<Result<Vec<_>>>()?;
        let nominal = layout.inputs.iter().map(|s| cur.float(s)).collect::<Result<Vec<_>>>()?;
        let input = layout.inputs.iter().map(|s| cur.float(s)).collect::<Result<Vec<_>>>()?;
        let zcbf = cur.float("H")?;
        let t_star = cur.float("t_star")?;
        let rd1 = layout.boxed.iter().map(|s| cur.float(s)).collect::<Result<Vec<_>>>()?;
        let distance = cur.float("distance")?;
        let input_violation = cur.float("input_violation")?;
        let fallback = cur.float("fallback")? != 0.0;
        let best_effort = cur.float("best_effort")? != 0.0;
        let active = cur.float("active")? as u64;
        let solve_time = cur.float("solve_ms")? * 1e-3;
        let diagnostics = if layout.diagnostics {
            let margin = cur.float("margin")?;
            let membership = match cur.next("membership")? {
                "inside" => Membership::Inside,
                "boundary" => Membership::Boundary,
                "outside" => Membership::Outside,
                other => return Err(Error::Io(format!("bad membership '{other}'"))),
            };
            Some(Diagnostics {
                margin,
                membership,
                switching: cur.float("switching")? != 0.0,
                truncated: cur.float("truncated")? != 0.0,
            })
        } else {
            None
        };
        Ok(Self {
            time,
            state,
            nominal,
            input,
            zcbf,
            t_star,
            rd1,
            distance,
            input_violation,
            fallback,
            best_effort,
            active,
            solve_time,
            diagnostics,
        })
    }
}

struct Cursor<'a>(csv::StringRecordIter<'a>);

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.0.next().ok_or_else(|| Error::Io(format!("log row is missing column {what}")))
    }

    fn float(&mut self, what: &str) -> Result<f64> {
        let s = self.next(what)?;
        s.parse::<f64>().map_err(|e| Error::Io(format!("bad value '{s}' in column {what}: {e}")))
    }
}

/// Appends rows to a CSV file, flushing after each one.
pub struct LogWriter {
    out: csv::Writer<BufWriter<File>>,
}

impl LogWriter {
    pub fn create(path: &Path, layout: &LogLayout) -> Result<Self> {
        let file = File::create(path)?;
        let mut out = csv::Writer::from_writer(BufWriter::new(file));
        out.write_record(layout.header()).map_err(csv_err)?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        self.out.write_record(row.fields()).map_err(csv_err)?;
        self.out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

impl SimLog {
    pub fn new(layout: LogLayout) -> Self {
        Self { layout, rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(self.layout.header()).expect("in-memory write");
        for row in &self.rows {
            out.write_record(row.fields()).expect("in-memory write");
        }
        String::from_utf8(out.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn parse(text: &str) -> Result<Self> {
        // A crash can leave the last line half-written.
        let complete = match text.rfind('\n') {
            Some(i) if i + 1 < text.len() => &text[..=i],
            Some(_) => text,
            None => return Err(Error::Io("log has no complete header line".into())),
        };
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(complete.as_bytes());
        let header = reader.headers().map_err(csv_err)?.clone();
        let layout = LogLayout::parse(&header.iter().collect::<Vec<_>>())?;
        let mut rows = Vec::new();
        for record in reader.records() {
            rows.push(LogRow::parse(&layout, &record.map_err(csv_err)?)?);
        }
        Ok(Self { layout, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
