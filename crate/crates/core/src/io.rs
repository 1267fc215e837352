//! CSV readers and writers for traces, detections, labels, Bayes inputs and
//! plot data.
//!
//! Every writer can prefix its output with `#` comment lines (see
//! [`Provenance`]); every reader skips them. Floats are written in Rust's
//! shortest round-trip form.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bayes::{Evidence, Outcome, Posterior, ResponseTable};
use crate::error::{Error, Result};
use crate::hsmm::Label;
use crate::trace::{DetectionEvent, Trace};

/// Relative tolerance on the spacing of time stamps in a trace file.
const SPACING_TOL: f64 = 1e-6;

/// Header comment written at the top of output files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// Provenance keyed on the SHA-256 of `text`.
    pub fn from_text(text: &str, seed: u64) -> Self {
        let digest = Sha256::digest(text.as_bytes());
        Provenance {
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed,
        }
    }

    /// The comment line, newline included.
    pub fn comment(&self) -> String {
        format!(
            "# nanowire {} config-sha256={} seed={}\n",
            env!("CARGO_PKG_VERSION"),
            self.config_hash,
            self.seed
        )
    }
}

/// Rows of a CSV file after the header, with their 1-based line numbers.
struct Table {
    path: String,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let parse_err = |line: usize, e: csv::Error| Error::Parse {
            path: name.clone(),
            line,
            msg: e.to_string(),
        };
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| parse_err(1, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.iter().all(|h| h.is_empty()) {
            return Err(Error::Parse {
                path: name,
                line: 1,
                msg: "missing header".into(),
            });
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let line = match &record {
                Ok(r) => r.position().map_or(0, |p| p.line() as usize),
                Err(e) => e.position().map_or(0, |p| p.line() as usize),
            };
            let record = record.map_err(|e| parse_err(line, e))?;
            rows.push((line, record.iter().map(str::to_owned).collect()));
        }
        Ok(Table {
            path: name,
            header,
            rows,
        })
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn expect_header(&self, want: &[&str]) -> Result<()> {
        if self.header.len() < want.len() || self.header.iter().zip(want).any(|(h, w)| h != w) {
            return Err(self.err(
                1,
                format!("expected header {}, found {}", want.join(","), self.header.join(",")),
            ));
        }
        Ok(())
    }

    fn float(&self, line: usize, field: &str) -> Result<f64> {
        let v: f64 = field
            .parse()
            .map_err(|_| self.err(line, format!("not a number: {field:?}")))?;
        if !v.is_finite() {
            return Err(self.err(line, format!("non-finite value {field:?}")));
        }
        Ok(v)
    }

    fn index(&self, line: usize, field: &str) -> Result<usize> {
        field
            .parse()
            .map_err(|_| self.err(line, format!("not a sample index: {field:?}")))
    }
}

struct Out {
    writer: csv::Writer<Vec<u8>>,
    prefix: String,
}

impl Out {
    fn new(provenance: Option<&Provenance>, header: &[&str]) -> Result<Self> {
        let mut out = Out {
            writer: csv::Writer::from_writer(Vec::new()),
            prefix: provenance.map(Provenance::comment).unwrap_or_default(),
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        self.writer
            .write_record(fields.into_iter().collect::<Vec<_>>())
            .map_err(|e| Error::invalid(format!("csv: {e}")))
    }

    fn finish(self, path: &Path) -> Result<()> {
        let body = self
            .writer
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv: {e}")))?;
        let mut bytes = self.prefix.into_bytes();
        bytes.extend(body);
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn times_to_grid(table: &Table, times: &[f64]) -> Result<(f64, f64)> {
    let t0 = times[0];
    if times.len() == 1 {
        return Ok((1.0, t0));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(table.err(table.rows[1].0, "time stamps must increase"));
    }
    for (i, &t) in times.iter().enumerate() {
        let expected = t0 + i as f64 * dt;
        if (t - expected).abs() > SPACING_TOL * dt.max(expected.abs()) {
            return Err(table.err(table.rows[i].0, format!("time {t} breaks the uniform {dt} s grid")));
        }
    }
    Ok((dt, t0))
}

/// Numeric columns of a file: header names and one vector per column.
pub fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let table = Table::read(path)?;
    let mut cols = vec![Vec::with_capacity(table.rows.len()); table.header.len()];
    for (line, row) in &table.rows {
        for (c, field) in row.iter().enumerate() {
            cols[c].push(table.float(*line, field)?);
        }
    }
    Ok((table.header, cols))
}

/// Read a `time,conductance` file. The sampling interval and start time come
/// from the time column, which must be uniformly spaced.
pub fn read_trace(path: &Path) -> Result<Trace> {
    let (_, mut traces) = read_multi(path)?;
    if traces.len() != 1 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: format!("expected one conductance column, found {}", traces.len()),
        });
    }
    Ok(traces.remove(0))
}

pub fn write_trace(path: &Path, trace: &Trace, provenance: Option<&Provenance>) -> Result<()> {
    write_multi(
        path,
        &["conductance".to_owned()],
        std::slice::from_ref(trace),
        provenance,
    )
}

/// Read a `time,w1,w2,...` file into one trace per wire column.
pub fn read_multi(path: &Path) -> Result<(Vec<String>, Vec<Trace>)> {
    let table = Table::read(path)?;
    if table.header.first().map(String::as_str) != Some("time") || table.header.len() < 2 {
        return Err(table.err(
            1,
            format!("expected header time,<wire>..., found {}", table.header.join(",")),
        ));
    }
    if table.rows.is_empty() {
        return Err(table.err(1, "no samples"));
    }
    let width = table.header.len();
    let mut times = Vec::with_capacity(table.rows.len());
    let mut cols = vec![Vec::with_capacity(table.rows.len()); width - 1];
    for (line, row) in &table.rows {
        times.push(table.float(*line, &row[0])?);
        for c in 1..width {
            cols[c - 1].push(table.float(*line, &row[c])?);
        }
    }
    let (dt, t0) = times_to_grid(&table, &times)?;
    let traces = cols
        .into_iter()
        .map(|c| Trace::new(c, dt, t0))
        .collect::<Result<Vec<_>>>()?;
    Ok((table.header[1..].to_vec(), traces))
}

pub fn write_multi(path: &Path, names: &[String], traces: &[Trace], provenance: Option<&Provenance>) -> Result<()> {
    if traces.is_empty() || names.len() != traces.len() {
        return Err(Error::invalid(format!(
            "{} names for {} traces",
            names.len(),
            traces.len()
        )));
    }
    let n = traces[0].len();
    if traces
        .iter()
        .any(|t| t.len() != n || t.dt() != traces[0].dt() || t.t0() != traces[0].t0())
    {
        return Err(Error::invalid("traces in one file must share their time grid"));
    }
    let mut header = vec!["time"];
    header.extend(names.iter().map(String::as_str));
    let mut out = Out::new(provenance, &header)?;
    for i in 0..n {
        let mut row = vec![traces[0].time(i).to_string()];
        row.extend(traces.iter().map(|t| t.samples()[i].to_string()));
        out.row(row)?;
    }
    out.finish(path)
}

/// One line of a detections file.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub onset: f64,
    pub duration: f64,
    pub score: f64,
    pub width: Option<usize>,
}

impl From<&DetectionEvent> for DetectionRow {
    fn from(e: &DetectionEvent) -> Self {
        DetectionRow {
            onset: e.onset,
            duration: e.duration,
            score: e.score,
            width: e.width,
        }
    }
}

/// `onset,duration,score,width`; the width is empty for events that did not
/// come from a matched filter.
pub fn write_detections(path: &Path, events: &[DetectionEvent], provenance: Option<&Provenance>) -> Result<()> {
    let mut out = Out::new(provenance, &["onset", "duration", "score", "width"])?;
    for e in events {
        out.row([
            e.onset.to_string(),
            e.duration.to_string(),
            e.score.to_string(),
            e.width.map(|w| w.to_string()).unwrap_or_default(),
        ])?;
    }
    out.finish(path)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRow>> {
    let table = Table::read(path)?;
    table.expect_header(&["onset", "duration", "score", "width"])?;
    table
        .rows
        .iter()
        .map(|(line, row)| {
            Ok(DetectionRow {
                onset: table.float(*line, &row[0])?,
                duration: table.float(*line, &row[1])?,
                score: table.float(*line, &row[2])?,
                width: if row[3].is_empty() {
                    None
                } else {
                    Some(table.index(*line, &row[3])?)
                },
            })
        })
        .collect()
}

/// Events with their tag, for decoded HSMM output.
pub fn write_tagged_events(path: &Path, events: &[DetectionEvent], provenance: Option<&Provenance>) -> Result<()> {
    let mut out = Out::new(provenance, &["onset", "duration", "score", "width", "tag"])?;
    for e in events {
        out.row([
            e.onset.to_string(),
            e.duration.to_string(),
            e.score.to_string(),
            e.width.map(|w| w.to_string()).unwrap_or_default(),
            e.tag.as_str().to_owned(),
        ])?;
    }
    out.finish(path)
}

/// `index,label` for every labeled sample; unlabeled samples are omitted.
pub fn write_labels(path: &Path, labels: &[Label], provenance: Option<&Provenance>) -> Result<()> {
    let mut out = Out::new(provenance, &["index", "label"])?;
    for (i, l) in labels.iter().enumerate() {
        let name = match l {
            Label::Dock => "dock",
            Label::NoDock => "nodock",
            Label::Unlabeled => continue,
        };
        out.row([i.to_string(), name.to_owned()])?;
    }
    out.finish(path)
}

/// Labels for a sequence of `len` samples; indices absent from the file are
/// unlabeled.
pub fn read_labels(path: &Path, len: usize) -> Result<Vec<Label>> {
    let table = Table::read(path)?;
    table.expect_header(&["index", "label"])?;
    let mut labels = vec![Label::Unlabeled; len];
    for (line, row) in &table.rows {
        let i = table.index(*line, &row[0])?;
        if i >= len {
            return Err(table.err(*line, format!("index {i} is beyond the {len}-sample sequence")));
        }
        labels[i] = match row[1].to_ascii_lowercase().as_str() {
            "dock" => Label::Dock,
            "nodock" => Label::NoDock,
            other => return Err(table.err(*line, format!("label must be dock or nodock, got {other:?}"))),
        };
    }
    Ok(labels)
}

/// Response table: first column modifier ids, header row agent ids.
pub fn read_table(path: &Path) -> Result<ResponseTable> {
    let table = Table::read(path)?;
    if table.header.len() < 2 {
        return Err(table.err(1, "table needs a modifier column and at least one agent"));
    }
    let agents = table.header[1..].to_vec();
    let mut modifiers = Vec::new();
    let mut p = Vec::new();
    for (line, row) in &table.rows {
        modifiers.push(row[0].clone());
        p.push(
            row[1..]
                .iter()
                .map(|f| table.float(*line, f))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    ResponseTable::new(modifiers, agents, p)
}

pub fn write_table(path: &Path, table: &ResponseTable, provenance: Option<&Provenance>) -> Result<()> {
    let mut header = vec!["modifier"];
    header.extend(table.agents().iter().map(String::as_str));
    let mut out = Out::new(provenance, &header)?;
    for (m, row) in table.modifiers().iter().zip(table.rows()) {
        let mut fields = vec![m.clone()];
        fields.extend(row.iter().map(|v| v.to_string()));
        out.row(fields)?;
    }
    out.finish(path)
}

fn parse_outcome(table: &Table, line: usize, field: &str) -> Result<Outcome> {
    match field.to_ascii_lowercase().as_str() {
        "yes" | "1" | "detected" | "true" => Ok(Outcome::Detected),
        "no" | "0" | "notdetected" | "false" => Ok(Outcome::NotDetected),
        other => Err(table.err(line, format!("outcome must be yes or no, got {other:?}"))),
    }
}

/// Evidence as `modifier,outcome[,strength]`, one row per wire. Replicate
/// wires are merged by majority vote. A strength column gives soft evidence
/// and then needs exactly one row per modifier.
pub fn read_evidence(path: &Path, response: &ResponseTable) -> Result<Evidence> {
    let table = Table::read(path)?;
    table.expect_header(&["modifier", "outcome"])?;
    let soft = table.header.get(2).map(String::as_str) == Some("strength");
    let mut wires = Vec::new();
    let mut strengths = vec![None; response.modifiers().len()];
    for (line, row) in &table.rows {
        wires.push((row[0].clone(), parse_outcome(&table, *line, &row[1])?));
        if soft {
            let m = response
                .modifier_index(&row[0])
                .ok_or_else(|| table.err(*line, format!("unknown modifier {}", row[0])))?;
            let s = table.float(*line, &row[2])?;
            if !(0.0..=1.0).contains(&s) {
                return Err(table.err(*line, format!("strength {s} is outside [0, 1]")));
            }
            if strengths[m].replace(s).is_some() {
                return Err(table.err(*line, format!("soft evidence repeats modifier {}", row[0])));
            }
        }
    }
    let mut evidence = Evidence::from_wires(response, &wires)?;
    if soft {
        evidence.strengths = Some(strengths.into_iter().map(|s| s.unwrap_or(0.0)).collect());
    }
    Ok(evidence)
}

pub fn write_evidence(
    path: &Path,
    response: &ResponseTable,
    evidence: &Evidence,
    provenance: Option<&Provenance>,
) -> Result<()> {
    let header: &[&str] = if evidence.strengths.is_some() {
        &["modifier", "outcome", "strength"]
    } else {
        &["modifier", "outcome"]
    };
    let mut out = Out::new(provenance, header)?;
    for (i, (m, o)) in response.modifiers().iter().zip(&evidence.outcomes).enumerate() {
        let mut fields = vec![m.clone(), if *o == Outcome::Detected { "yes" } else { "no" }.to_owned()];
        if let Some(s) = &evidence.strengths {
            fields.push(s[i].to_string());
        }
        out.row(fields)?;
    }
    out.finish(path)
}

/// Prior as `agent,prior`; every table agent must appear once. The values
/// are normalised to sum to 1.
pub fn read_prior(path: &Path, response: &ResponseTable) -> Result<Vec<f64>> {
    let table = Table::read(path)?;
    table.expect_header(&["agent", "prior"])?;
    let mut prior = vec![None; response.agents().len()];
    for (line, row) in &table.rows {
        let a = response
            .agent_index(&row[0])
            .ok_or_else(|| table.err(*line, format!("unknown agent {}", row[0])))?;
        let v = table.float(*line, &row[1])?;
        if v < 0.0 {
            return Err(table.err(*line, "prior values must be nonnegative"));
        }
        if prior[a].replace(v).is_some() {
            return Err(table.err(*line, format!("agent {} listed twice", row[0])));
        }
    }
    let prior: Vec<f64> = prior
        .into_iter()
        .zip(response.agents())
        .map(|(v, a)| v.ok_or_else(|| table.err(1, format!("prior has no entry for agent {a}"))))
        .collect::<Result<_>>()?;
    let total: f64 = prior.iter().sum();
    if !(total > 0.0) {
        return Err(table.err(1, "prior sums to zero"));
    }
    Ok(prior.iter().map(|v| v / total).collect())
}

pub fn write_posterior(path: &Path, posterior: &Posterior, provenance: Option<&Provenance>) -> Result<()> {
    let mut out = Out::new(provenance, &["agent", "posterior"])?;
    for (a, p) in posterior.agents.iter().zip(&posterior.probs) {
        out.row([a.clone(), p.to_string()])?;
    }
    out.finish(path)
}

/// Free-form text table, for summaries that are not numeric columns.
pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>], provenance: Option<&Provenance>) -> Result<()> {
    let mut out = Out::new(provenance, header)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::invalid(format!(
                "row has {} fields, header has {}",
                r.len(),
                header.len()
            )));
        }
        out.row(r.iter().cloned())?;
    }
    out.finish(path)
}

/// Plain columns `x,<name>...` for external plotting. All series must match
/// the length of `x`.
pub fn emit_plot_data(
    path: &Path,
    x_name: &str,
    x: &[f64],
    series: &[(&str, &[f64])],
    provenance: Option<&Provenance>,
) -> Result<()> {
    if series.is_empty() {
        return Err(Error::invalid("no series to plot"));
    }
    if let Some((name, s)) = series.iter().find(|(_, s)| s.len() != x.len()) {
        return Err(Error::invalid(format!(
            "series {name} has {} points, x has {}",
            s.len(),
            x.len()
        )));
    }
    let mut header = vec![x_name];
    header.extend(series.iter().map(|(n, _)| *n));
    let mut out = Out::new(provenance, &header)?;
    for i in 0..x.len() {
        let mut row = vec![x[i].to_string()];
        row.extend(series.iter().map(|(_, s)| s[i].to_string()));
        out.row(row)?;
    }
    out.finish(path)
}
