use std::io::{Read, Write};

use serde::{Deserialize, Serialize, Serializer};

use crate::control::Event;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "run_id",
    "seed",
    "generation",
    "true_evals",
    "hw_batches",
    "best_f",
    "sigma",
    "event",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Target,
    Stagnation,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Budget => "budget",
            StopReason::Target => "target",
            StopReason::Stagnation => "stagnation",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "budget" => Some(StopReason::Budget),
            "target" => Some(StopReason::Target),
            "stagnation" => Some(StopReason::Stagnation),
            _ => None,
        }
    }
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

/// State after one generation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub generation: u64,
    /// Cumulative true evaluations.
    pub true_evals: u64,
    /// Cumulative hardware batches.
    pub hw_batches: u64,
    /// Best true fitness so far; infinite before the first evaluation.
    #[serde(serialize_with = "finite_or_null")]
    pub best_f: f64,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub run_id: String,
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    pub stop: StopReason,
    pub best_x: Option<Vec<f64>>,
}

impl RunTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace has an initial record")
    }

    pub fn final_best(&self) -> f64 {
        self.last().best_f
    }

    pub fn final_evals(&self) -> u64 {
        self.last().true_evals
    }

    /// Best fitness after at most `evals` true evaluations.
    pub fn best_at(&self, evals: u64) -> f64 {
        self.records
            .iter()
            .take_while(|r| r.true_evals <= evals)
            .last()
            .map_or(f64::INFINITY, |r| r.best_f)
    }

    /// Counters non-decreasing and best fitness non-increasing.
    pub fn check_invariants(&self) -> Result<()> {
        for w in self.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.true_evals < a.true_evals || b.hw_batches < a.hw_batches || b.best_f > a.best_f {
                return Err(Error::Internal(format!(
                    "trace {} not monotone at generation {}",
                    self.run_id, b.generation
                )));
            }
        }
        Ok(())
    }

    fn event_text(&self, i: usize) -> String {
        let mut parts: Vec<String> = self.records[i].events.iter().map(|e| e.to_string()).collect();
        if i + 1 == self.records.len() {
            parts.push(format!("stop({})", self.stop.as_str()));
        }
        parts.join(";")
    }
}

/// Write traces as CSV, one row per generation record.
pub fn write_csv<W: Write>(traces: &[RunTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Internal(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for t in traces {
        for (i, r) in t.records.iter().enumerate() {
            w.write_record([
                t.run_id.clone(),
                t.seed.to_string(),
                r.generation.to_string(),
                r.true_evals.to_string(),
                r.hw_batches.to_string(),
                r.best_f.to_string(),
                r.sigma.to_string(),
                t.event_text(i),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Internal(format!("csv: {e}")))?;
    Ok(())
}

/// Read traces written by [`write_csv`]. Structured events are not restored.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<RunTrace>> {
    let mut rdr = csv::Reader::from_reader(input);
    let bad = |msg: String| Error::config("trace.csv", msg);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(bad(format!("unexpected header {headers:?}")));
    }
    let mut traces: Vec<RunTrace> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<f64> { row[i].parse::<f64>().map_err(|e| bad(format!("{}: {e}", CSV_HEADER[i]))) };
        let int = |i: usize| -> Result<u64> { row[i].parse::<u64>().map_err(|e| bad(format!("{}: {e}", CSV_HEADER[i]))) };
        let record = TraceRecord {
            generation: int(2)?,
            true_evals: int(3)?,
            hw_batches: int(4)?,
            best_f: num(5)?,
            sigma: num(6)?,
            events: Vec::new(),
        };
        let stop = row[7]
            .split(';')
            .filter_map(|p| p.strip_prefix("stop(").and_then(|s| s.strip_suffix(')')))
            .find_map(StopReason::parse);
        let run_id = &row[0];
        let seed = int(1)?;
        match traces.last_mut() {
            Some(t) if t.run_id == run_id => t.records.push(record),
            _ => traces.push(RunTrace {
                run_id: run_id.to_string(),
                seed,
                records: vec![record],
                stop: StopReason::Budget,
                best_x: None,
            }),
        }
        if let Some(s) = stop {
            traces.last_mut().expect("just pushed").stop = s;
        }
    }
    Ok(traces)
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    run_id: &'a str,
    seed: u64,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

#[derive(Serialize)]
struct JsonTerminal<'a> {
    run_id: &'a str,
    seed: u64,
    stop: StopReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_x: Option<&'a Vec<f64>>,
}

/// Write traces as line-delimited JSON: one line per record, then a terminal line per run.
pub fn write_jsonl<W: Write>(traces: &[RunTrace], mut out: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Internal(format!("jsonl: {e}"));
    for t in traces {
        for r in &t.records {
            let line = serde_json::to_string(&JsonRecord {
                run_id: &t.run_id,
                seed: t.seed,
                record: r,
            })
            .map_err(|e| Error::Internal(e.to_string()))?;
            writeln!(out, "{line}").map_err(io)?;
        }
        let line = serde_json::to_string(&JsonTerminal {
            run_id: &t.run_id,
            seed: t.seed,
            stop: t.stop,
            best_x: t.best_x.as_ref(),
        })
        .map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}
