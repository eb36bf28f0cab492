//! CSV and JSONL persistence for windows, datasets and feedback pools.
//!
//! One window per row/line. Named columns are `subject_id,label,activity,source,t0_ms`,
//! optionally followed by `provenance`, `round` and `verdict`, then the value columns
//! `ax_0..ax_{W-1}`, `ay_0..`, `az_0..`. Columns are looked up by name on read.
//! Floats are written in shortest round-trip form, so finite values survive bit-for-bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};
use crate::window::{
    AccelWindow, Dataset, FeedbackSample, Label, Provenance, Source, Verdict, WindowMeta, WINDOW_LEN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl`/`.json` select JSONL; everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

/// A persisted row: the window plus the optional feedback/round columns.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub window: AccelWindow,
    pub provenance: Option<Provenance>,
    pub round: Option<u32>,
    pub verdict: Option<Verdict>,
}

impl WindowRecord {
    pub fn plain(window: AccelWindow) -> Self {
        Self { window, provenance: None, round: None, verdict: None }
    }
}

const AXES: [&str; 3] = ["ax", "ay", "az"];

fn provenance_str(p: Provenance) -> &'static str {
    match p {
        Provenance::Original => "original",
        Provenance::Selected => "selected",
        Provenance::Merged => "merged",
    }
}

fn parse_provenance(s: &str) -> Option<Provenance> {
    match s.trim() {
        "original" => Some(Provenance::Original),
        "selected" => Some(Provenance::Selected),
        "merged" => Some(Provenance::Merged),
        _ => None,
    }
}

fn fmt_f64(v: f64) -> String {
    // `Display` for f64 prints the shortest string that parses back to the same bits.
    format!("{v}")
}

struct Columns {
    subject_id: usize,
    label: usize,
    activity: usize,
    source: usize,
    t0_ms: usize,
    provenance: Option<usize>,
    round: Option<usize>,
    verdict: Option<usize>,
    values: [Vec<usize>; 3],
}

impl Columns {
    fn resolve(header: &csv::StringRecord, window_len: usize) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let need = |name: &str| find(name).ok_or_else(|| Error::Schema(format!("missing column `{name}`")));
        let mut values: [Vec<usize>; 3] = Default::default();
        for (a, axis) in AXES.iter().enumerate() {
            let present = header.iter().filter(|h| h.trim().starts_with(&format!("{axis}_"))).count();
            if present != window_len {
                return Err(Error::Schema(format!(
                    "expected {window_len} `{axis}_*` value columns, found {present}"
                )));
            }
            for i in 0..window_len {
                values[a].push(need(&format!("{axis}_{i}"))?);
            }
        }
        Ok(Self {
            subject_id: need("subject_id")?,
            label: need("label")?,
            activity: need("activity")?,
            source: need("source")?,
            t0_ms: need("t0_ms")?,
            provenance: find("provenance"),
            round: find("round"),
            verdict: find("verdict"),
            values,
        })
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, line: usize) -> Result<&'a str> {
    rec.get(idx).ok_or_else(|| parse_err(line, "row is shorter than the header"))
}

fn csv_header(window_len: usize, with_provenance: bool, with_round: bool, with_verdict: bool) -> Vec<String> {
    let mut h: Vec<String> = ["subject_id", "label", "activity", "source", "t0_ms"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if with_provenance {
        h.push("provenance".into());
    }
    if with_round {
        h.push("round".into());
    }
    if with_verdict {
        h.push("verdict".into());
    }
    for axis in AXES {
        h.extend((0..window_len).map(|i| format!("{axis}_{i}")));
    }
    h
}

fn read_csv<R: Read>(reader: R, window_len: usize) -> Result<Vec<WindowRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Ok(Vec::new());
    }
    let cols = Columns::resolve(&header, window_len)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(i + 2, e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let label_s = field(&rec, cols.label, line)?;
        let label = Label::parse(label_s).ok_or_else(|| parse_err(line, format!("bad label `{label_s}`")))?;
        let source_s = field(&rec, cols.source, line)?;
        let source =
            Source::parse(source_s).ok_or_else(|| parse_err(line, format!("bad source `{source_s}`")))?;
        let t0_ms: i64 = field(&rec, cols.t0_ms, line)?
            .trim()
            .parse()
            .map_err(|e| parse_err(line, format!("bad t0_ms: {e}")))?;
        let activity = field(&rec, cols.activity, line)?.trim();
        let provenance = match cols.provenance {
            Some(c) => {
                let s = field(&rec, c, line)?;
                if s.trim().is_empty() {
                    None
                } else {
                    Some(parse_provenance(s).ok_or_else(|| parse_err(line, format!("bad provenance `{s}`")))?)
                }
            }
            None => None,
        };
        let round = match cols.round {
            Some(c) => {
                let s = field(&rec, c, line)?.trim();
                if s.is_empty() {
                    None
                } else {
                    Some(s.parse::<u32>().map_err(|e| parse_err(line, format!("bad round: {e}")))?)
                }
            }
            None => None,
        };
        let verdict = match cols.verdict {
            Some(c) => {
                let s = field(&rec, c, line)?;
                if s.trim().is_empty() {
                    None
                } else {
                    Some(Verdict::parse(s).ok_or_else(|| parse_err(line, format!("bad verdict `{s}`")))?)
                }
            }
            None => None,
        };
        let mut axes: [Vec<f64>; 3] = Default::default();
        for a in 0..3 {
            axes[a] = cols.values[a]
                .iter()
                .map(|&c| {
                    let s = field(&rec, c, line)?;
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| parse_err(line, format!("bad value `{s}`: {e}")))
                })
                .collect::<Result<_>>()?;
        }
        let [x, y, z] = axes;
        let meta = WindowMeta {
            subject_id: field(&rec, cols.subject_id, line)?.trim().to_string(),
            label,
            activity: (!activity.is_empty()).then(|| activity.to_string()),
            source,
        };
        let window = AccelWindow::new(meta, t0_ms, x, y, z).map_err(|e| parse_err(line, e.to_string()))?;
        out.push(WindowRecord { window, provenance, round, verdict });
    }
    Ok(out)
}

fn write_csv<W: Write>(writer: W, records: &[WindowRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let Some(first) = records.first() else {
        return Ok(());
    };
    let window_len = first.window.len();
    let with_prov = records.iter().any(|r| r.provenance.is_some());
    let with_round = records.iter().any(|r| r.round.is_some());
    let with_verdict = records.iter().any(|r| r.verdict.is_some());
    let csv_io = |e: csv::Error| Error::Schema(format!("csv write failed: {e}"));
    wtr.write_record(csv_header(window_len, with_prov, with_round, with_verdict))
        .map_err(csv_io)?;
    for r in records {
        let w = &r.window;
        if w.len() != window_len {
            return Err(Error::Schema(format!(
                "window {} has {} samples, file uses {window_len}",
                w.key(),
                w.len()
            )));
        }
        let mut row = vec![
            w.subject_id.clone(),
            w.label.as_str().to_string(),
            w.activity.clone().unwrap_or_default(),
            w.source.as_str().to_string(),
            w.t0_ms.to_string(),
        ];
        if with_prov {
            row.push(r.provenance.map(provenance_str).unwrap_or_default().to_string());
        }
        if with_round {
            row.push(r.round.map(|v| v.to_string()).unwrap_or_default());
        }
        if with_verdict {
            row.push(r.verdict.map(|v| v.as_str()).unwrap_or_default().to_string());
        }
        for axis in w.axes() {
            row.extend(axis.iter().map(|&v| fmt_f64(v)));
        }
        wtr.write_record(&row).map_err(csv_io)?;
    }
    wtr.flush().map_err(|e| Error::Schema(format!("csv flush failed: {e}")))?;
    Ok(())
}

fn read_jsonl<R: Read>(reader: R, window_len: usize) -> Result<Vec<WindowRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err(line_no, "expected a JSON object"))?;
        let text = |key: &str| -> Result<Option<&str>> {
            match obj.get(key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.as_str())),
                Some(_) => Err(parse_err(line_no, format!("`{key}` must be a string"))),
            }
        };
        let required = |key: &str| -> Result<&str> {
            text(key)?.ok_or_else(|| Error::Schema(format!("line {line_no}: missing field `{key}`")))
        };
        let label_s = required("label")?;
        let label =
            Label::parse(label_s).ok_or_else(|| parse_err(line_no, format!("bad label `{label_s}`")))?;
        let source_s = required("source")?;
        let source =
            Source::parse(source_s).ok_or_else(|| parse_err(line_no, format!("bad source `{source_s}`")))?;
        let t0_ms = obj
            .get("t0_ms")
            .and_then(Value::as_i64)
            .ok_or_else(|| Error::Schema(format!("line {line_no}: missing integer `t0_ms`")))?;
        let provenance = match text("provenance")? {
            Some(s) => Some(parse_provenance(s).ok_or_else(|| parse_err(line_no, format!("bad provenance `{s}`")))?),
            None => None,
        };
        let round = match obj.get("round") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .and_then(|r| u32::try_from(r).ok())
                    .ok_or_else(|| parse_err(line_no, "bad round"))?,
            ),
        };
        let verdict = match text("verdict")? {
            Some(s) => Some(Verdict::parse(s).ok_or_else(|| parse_err(line_no, format!("bad verdict `{s}`")))?),
            None => None,
        };
        let mut axes: [Vec<f64>; 3] = Default::default();
        for (a, axis) in AXES.iter().enumerate() {
            let present = obj.keys().filter(|k| k.starts_with(&format!("{axis}_"))).count();
            if present != window_len {
                return Err(Error::Schema(format!(
                    "line {line_no}: expected {window_len} `{axis}_*` values, found {present}"
                )));
            }
            for i in 0..window_len {
                let key = format!("{axis}_{i}");
                let v = obj
                    .get(&key)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::Schema(format!("line {line_no}: missing numeric `{key}`")))?;
                axes[a].push(v);
            }
        }
        let [x, y, z] = axes;
        let meta = WindowMeta {
            subject_id: required("subject_id")?.to_string(),
            label,
            activity: text("activity")?.filter(|s| !s.is_empty()).map(str::to_string),
            source,
        };
        let window = AccelWindow::new(meta, t0_ms, x, y, z).map_err(|e| parse_err(line_no, e.to_string()))?;
        out.push(WindowRecord { window, provenance, round, verdict });
    }
    Ok(out)
}

fn write_jsonl<W: Write>(mut writer: W, records: &[WindowRecord]) -> Result<()> {
    let io = |e: std::io::Error| Error::Schema(format!("jsonl write failed: {e}"));
    for r in records {
        let w = &r.window;
        let mut obj = Map::new();
        obj.insert("subject_id".into(), Value::String(w.subject_id.clone()));
        obj.insert("label".into(), Value::String(w.label.as_str().into()));
        obj.insert(
            "activity".into(),
            w.activity.clone().map(Value::String).unwrap_or(Value::Null),
        );
        obj.insert("source".into(), Value::String(w.source.as_str().into()));
        obj.insert("t0_ms".into(), Value::from(w.t0_ms));
        if let Some(p) = r.provenance {
            obj.insert("provenance".into(), Value::String(provenance_str(p).into()));
        }
        if let Some(round) = r.round {
            obj.insert("round".into(), Value::from(round));
        }
        if let Some(v) = r.verdict {
            obj.insert("verdict".into(), Value::String(v.as_str().into()));
        }
        for (axis, values) in AXES.iter().zip(w.axes()) {
            for (i, &v) in values.iter().enumerate() {
                let n = Number::from_f64(v).ok_or_else(|| Error::Schema("non-finite value".into()))?;
                obj.insert(format!("{axis}_{i}"), Value::Number(n));
            }
        }
        serde_json::to_writer(&mut writer, &Value::Object(obj))
            .map_err(|e| Error::Schema(format!("jsonl write failed: {e}")))?;
        writer.write_all(b"\n").map_err(io)?;
    }
    writer.flush().map_err(io)
}

/// Reads window records expecting `window_len` samples per axis.
pub fn read_records<R: Read>(reader: R, format: Format, window_len: usize) -> Result<Vec<WindowRecord>> {
    match format {
        Format::Csv => read_csv(reader, window_len),
        Format::Jsonl => read_jsonl(reader, window_len),
    }
}

pub fn write_records<W: Write>(writer: W, records: &[WindowRecord], format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(writer, records),
        Format::Jsonl => write_jsonl(writer, records),
    }
}

pub fn load_records(path: &Path, format: Format, window_len: usize) -> Result<Vec<WindowRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file), format, window_len)
}

pub fn save_records(path: &Path, records: &[WindowRecord], format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(BufWriter::new(file), records, format)
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    let records = load_records(path, format, WINDOW_LEN)?;
    let provenance = records
        .first()
        .and_then(|r| r.provenance)
        .unwrap_or(Provenance::Original);
    Dataset::new(records.into_iter().map(|r| r.window).collect(), provenance)
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: Format) -> Result<()> {
    let records: Vec<WindowRecord> = dataset
        .windows()
        .iter()
        .map(|w| WindowRecord {
            window: w.clone(),
            provenance: Some(dataset.provenance),
            round: None,
            verdict: None,
        })
        .collect();
    save_records(path, &records, format)
}

pub fn load_feedback(path: &Path, format: Format) -> Result<Vec<FeedbackSample>> {
    load_records(path, format, WINDOW_LEN)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let verdict = r
                .verdict
                .ok_or_else(|| Error::Schema(format!("record {} has no verdict", i + 1)))?;
            let round = r
                .round
                .ok_or_else(|| Error::Schema(format!("record {} has no round", i + 1)))?;
            FeedbackSample::new(r.window, verdict, round)
        })
        .collect()
}

pub fn save_feedback(feedback: &[FeedbackSample], path: &Path, format: Format) -> Result<()> {
    let records: Vec<WindowRecord> = feedback
        .iter()
        .map(|f| WindowRecord {
            window: f.window.clone(),
            provenance: None,
            round: Some(f.round),
            verdict: Some(f.verdict),
        })
        .collect();
    save_records(path, &records, format)
}

/// Persists generated rounds (round numbers start at 1).
pub fn save_rounds(rounds: &[Vec<AccelWindow>], path: &Path, format: Format) -> Result<()> {
    let records: Vec<WindowRecord> = rounds
        .iter()
        .enumerate()
        .flat_map(|(r, ws)| {
            ws.iter().map(move |w| WindowRecord {
                window: w.clone(),
                provenance: None,
                round: Some(r as u32 + 1),
                verdict: None,
            })
        })
        .collect();
    save_records(path, &records, format)
}

pub fn load_rounds(path: &Path, format: Format) -> Result<Vec<Vec<AccelWindow>>> {
    let mut rounds: Vec<Vec<AccelWindow>> = Vec::new();
    for (i, r) in load_records(path, format, WINDOW_LEN)?.into_iter().enumerate() {
        let round = r
            .round
            .filter(|&v| v >= 1)
            .ok_or_else(|| Error::Schema(format!("record {} has no valid round", i + 1)))? as usize;
        if rounds.len() < round {
            rounds.resize_with(round, Vec::new);
        }
        rounds[round - 1].push(r.window);
    }
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::window::test_util::*;

    fn sample_windows(len: usize) -> Vec<AccelWindow> {
        (0..3)
            .map(|k| {
                let x = (0..len).map(|i| (i as f64 * 0.37 + k as f64).sin() * 9.81).collect();
                let y = (0..len).map(|i| 1.0 / (i as f64 + 3.0) - k as f64).collect();
                let z = (0..len).map(|i| (i * k) as f64 * 1e-7).collect();
                let label = if k == 1 { Label::Fall } else { Label::Adl };
                window_from(label, k as i64 * 1000, x, y, z)
            })
            .collect()
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let records: Vec<WindowRecord> = sample_windows(8)
            .into_iter()
            .enumerate()
            .map(|(i, w)| WindowRecord {
                verdict: Some(if w.label == Label::Fall { Verdict::Tp } else { Verdict::Fp }),
                round: Some(i as u32 + 1),
                provenance: None,
                window: w,
            })
            .collect();
        for format in [Format::Csv, Format::Jsonl] {
            let mut buf = Vec::new();
            write_records(&mut buf, &records, format).unwrap();
            let back = read_records(buf.as_slice(), format, 8).unwrap();
            assert_eq!(back, records, "{format:?}");
        }
    }

    #[test]
    fn header_matches_documented_layout() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[WindowRecord::plain(sample_windows(128).remove(0))], Format::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("subject_id,label,activity,source,t0_ms,ax_0,ax_1,"));
        assert!(header.ends_with(",az_126,az_127"));
        assert_eq!(header.split(',').count(), 5 + 3 * 128);
    }

    #[test]
    fn wrong_value_column_count_is_schema_error() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[WindowRecord::plain(sample_windows(127).remove(0))], Format::Csv).unwrap();
        let err = read_records(buf.as_slice(), Format::Csv, 128).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(read_records(&b""[..], Format::Csv, 128).unwrap().is_empty());
        assert!(read_records(&b""[..], Format::Jsonl, 128).unwrap().is_empty());
    }

    #[test]
    fn malformed_row_names_line() {
        let mut buf = Vec::new();
        let records: Vec<_> = sample_windows(4).into_iter().map(WindowRecord::plain).collect();
        write_records(&mut buf, &records, Format::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen(",adl,", ",walking?,", 2);
        match read_records(text.as_bytes(), Format::Csv, 4).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        let bad_json = "{\"subject_id\":\"a\"}\nnot json\n";
        assert!(matches!(
            read_records(bad_json.as_bytes(), Format::Jsonl, 4),
            Err(Error::Schema(_)) | Err(Error::Parse { line: 1, .. })
        ));
    }
}
