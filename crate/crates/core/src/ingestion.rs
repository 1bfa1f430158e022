//! Study-log ingestion: Duolingo-style session CSV to canonical review logs,
//! plus the canonical on-disk format.
//!
//! The canonical file is line-delimited UTF-8. The first line is the header
//! `#memorize-log<TAB>v1`; each further line is one review event:
//!
//! ```text
//! user  item  start  end  t  r  p_recall
//! ```
//!
//! separated by tabs, times in days, `r` in `{0, 1}` and `p_recall` empty
//! when unobserved. A pair without reviews is written once with `t`, `r`
//! and `p_recall` set to `-`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::memory::{ReviewEvent, ReviewSequence};

pub const FORMAT_MAGIC: &str = "#memorize-log";
pub const FORMAT_VERSION: &str = "v1";
const SECONDS_PER_DAY: f64 = 86_400.0;

/// One study session of a (user, item) pair as it appears in the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSessionRow {
    pub p_recall: f64,
    /// Seconds since the epoch.
    pub timestamp: i64,
    /// Seconds since the previous session of the pair.
    pub delta: i64,
    pub user_id: String,
    pub item_id: String,
    pub history_seen: u64,
    pub history_correct: u64,
    pub session_seen: u64,
    pub session_correct: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows: Vec<RawSessionRow>,
    pub errors: Vec<RowError>,
}

const REQUIRED: [&str; 6] = [
    "timestamp",
    "delta",
    "user_id",
    "lexeme_id",
    "session_seen",
    "session_correct",
];

pub fn parse_csv_path(path: &Path) -> Result<ParseReport> {
    parse_csv(File::open(path)?)
}

/// Parses rows; malformed rows are reported and skipped. `p_recall` is the
/// session's fraction correct, falling back to the `p_recall` column when
/// the session is empty.
pub fn parse_csv<R: Read>(input: R) -> Result<ParseReport> {
    parse_csv_where(input, |_| true)
}

/// As [`parse_csv`], keeping only rows whose user passes `keep`.
pub fn parse_csv_where<R: Read, F: Fn(&str) -> bool>(input: R, keep: F) -> Result<ParseReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(ParseReport::default());
    }
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = BTreeMap::new();
    for name in REQUIRED {
        idx.insert(name, col(name).ok_or_else(|| Error::MissingColumn(name.into()))?);
    }
    let opt = |name: &str| col(name);
    let (p_col, hs_col, hc_col) = (opt("p_recall"), opt("history_seen"), opt("history_correct"));

    let mut report = ParseReport::default();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                report.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if let Some(u) = rec.get(idx["user_id"]) {
            if !keep(u.trim()) {
                continue;
            }
        }
        let line = rec.position().map_or(0, |p| p.line());
        match parse_row(&rec, &idx, p_col, hs_col, hc_col) {
            Ok(row) => report.rows.push(row),
            Err(message) => report.errors.push(RowError { line, message }),
        }
    }
    Ok(report)
}

fn parse_row(
    rec: &csv::StringRecord,
    idx: &BTreeMap<&str, usize>,
    p_col: Option<usize>,
    hs_col: Option<usize>,
    hc_col: Option<usize>,
) -> std::result::Result<RawSessionRow, String> {
    fn cell<'a>(rec: &'a csv::StringRecord, i: usize, name: &str) -> std::result::Result<&'a str, String> {
        rec.get(i).map(str::trim).ok_or_else(|| format!("missing cell `{name}`"))
    }
    fn num<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<T, String> {
        let s = cell(rec, i, name)?;
        s.parse().map_err(|_| format!("`{name}`: cannot parse {s:?}"))
    }
    let timestamp: i64 = num(rec, idx["timestamp"], "timestamp")?;
    let delta: i64 = num(rec, idx["delta"], "delta")?;
    if delta < 0 {
        return Err(format!("`delta` is negative ({delta})"));
    }
    let session_seen: u64 = num(rec, idx["session_seen"], "session_seen")?;
    let session_correct: u64 = num(rec, idx["session_correct"], "session_correct")?;
    if session_correct > session_seen {
        return Err(format!("session_correct {session_correct} exceeds session_seen {session_seen}"));
    }
    let history_seen = hs_col.map_or(Ok(0), |i| num(rec, i, "history_seen"))?;
    let history_correct = hc_col.map_or(Ok(0), |i| num(rec, i, "history_correct"))?;
    let p_recall = if session_seen > 0 {
        session_correct as f64 / session_seen as f64
    } else if let Some(i) = p_col {
        num(rec, i, "p_recall")?
    } else {
        return Err("empty session and no `p_recall`".into());
    };
    if !(0.0..=1.0).contains(&p_recall) {
        return Err(format!("p_recall {p_recall} outside [0, 1]"));
    }
    let user_id = cell(rec, idx["user_id"], "user_id")?.to_string();
    let item_id = cell(rec, idx["lexeme_id"], "lexeme_id")?.to_string();
    if user_id.is_empty() || item_id.is_empty() {
        return Err("empty user or item id".into());
    }
    Ok(RawSessionRow {
        p_recall,
        timestamp,
        delta,
        user_id,
        item_id,
        history_seen,
        history_correct,
        session_seen,
        session_correct,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub min_user_events: usize,
    pub min_item_events: usize,
    /// Rows of a pair within this many seconds of a session's first row
    /// belong to that session.
    pub coalesce_seconds: i64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            min_user_events: 30,
            min_item_events: 30,
            coalesce_seconds: 0,
        }
    }
}

/// Review sequences sorted by (user, item).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CanonicalLog {
    pub sequences: Vec<ReviewSequence>,
}

impl CanonicalLog {
    pub fn event_count(&self) -> usize {
        self.sequences.iter().map(ReviewSequence::len).sum()
    }
}

/// One event per (user, item, session), times in days from the pair's
/// exposure (first session minus its `delta`), success iff every recall in
/// the session succeeded. Then users and items with too few events are
/// dropped, repeatedly, until both thresholds hold.
pub fn collapse_and_filter(rows: &[RawSessionRow], config: &IngestConfig) -> Result<CanonicalLog> {
    if config.coalesce_seconds < 0 {
        return Err(invalid("coalesce_seconds", "must be >= 0"));
    }
    let mut pairs: BTreeMap<(&str, &str), Vec<&RawSessionRow>> = BTreeMap::new();
    for r in rows {
        pairs.entry((&r.user_id, &r.item_id)).or_default().push(r);
    }
    let mut sequences = Vec::with_capacity(pairs.len());
    for ((user, item), mut rs) in pairs {
        rs.sort_by_key(|r| r.timestamp);
        let origin = rs[0].timestamp - rs[0].delta;
        // (session start, seen, correct, fallback p)
        let mut sessions: Vec<(i64, u64, u64, f64)> = Vec::new();
        for r in rs {
            match sessions.last_mut() {
                Some(s) if r.timestamp - s.0 <= config.coalesce_seconds => {
                    s.1 += r.session_seen;
                    s.2 += r.session_correct;
                    s.3 = s.3.min(r.p_recall);
                }
                _ => sessions.push((r.timestamp, r.session_seen, r.session_correct, r.p_recall)),
            }
        }
        let mut seq = ReviewSequence::new(user, item, 0.0, 0.0);
        for (ts, seen, correct, fallback) in sessions {
            let p = if seen > 0 { correct as f64 / seen as f64 } else { fallback };
            seq.events.push(ReviewEvent {
                t: (ts - origin) as f64 / SECONDS_PER_DAY,
                recall: p == 1.0,
                p_recall: Some(p),
            });
        }
        seq.end = seq.events.last().map_or(0.0, |e| e.t);
        sequences.push(seq);
    }
    Ok(CanonicalLog {
        sequences: filter_sequences(sequences, config),
    })
}

/// Drops sequences of users or items below the event thresholds until
/// nothing changes.
pub fn filter_sequences(mut seqs: Vec<ReviewSequence>, config: &IngestConfig) -> Vec<ReviewSequence> {
    loop {
        let mut by_user: BTreeMap<&str, usize> = BTreeMap::new();
        let mut by_item: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &seqs {
            *by_user.entry(&s.user).or_default() += s.len();
            *by_item.entry(&s.item).or_default() += s.len();
        }
        let users: BTreeSet<String> = by_user
            .into_iter()
            .filter(|(_, n)| *n >= config.min_user_events)
            .map(|(u, _)| u.to_string())
            .collect();
        let items: BTreeSet<String> = by_item
            .into_iter()
            .filter(|(_, n)| *n >= config.min_item_events)
            .map(|(i, _)| i.to_string())
            .collect();
        let before = seqs.len();
        seqs.retain(|s| users.contains(&s.user) && items.contains(&s.item));
        if seqs.len() == before {
            return seqs;
        }
    }
}

/// Re-applies the thresholds to an already collapsed log.
pub fn refilter(log: &CanonicalLog, config: &IngestConfig) -> CanonicalLog {
    CanonicalLog {
        sequences: filter_sequences(log.sequences.clone(), config),
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(invalid("id", format!("{id:?} is empty or contains a tab or newline")));
    }
    Ok(())
}

pub fn write_log<W: Write>(log: &CanonicalLog, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{FORMAT_MAGIC}\t{FORMAT_VERSION}")?;
    for s in &log.sequences {
        check_id(&s.user)?;
        check_id(&s.item)?;
        if s.events.is_empty() {
            writeln!(w, "{}\t{}\t{}\t{}\t-\t-\t-", s.user, s.item, s.start, s.end)?;
        }
        for e in &s.events {
            let p = e.p_recall.map(|p| p.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.user,
                s.item,
                s.start,
                s.end,
                e.t,
                u8::from(e.recall),
                p
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn persist(log: &CanonicalLog, path: &Path) -> Result<()> {
    write_log(log, File::create(path)?)
}

pub fn load(path: &Path) -> Result<CanonicalLog> {
    read_log(File::open(path)?)
}

pub fn read_log<R: Read>(input: R) -> Result<CanonicalLog> {
    let mut rdr = BufReader::new(input);
    let mut line = String::new();
    let mut offset: u64 = 0;
    let n = rdr.read_line(&mut line)?;
    let header = line.strip_suffix('\n').ok_or(Error::CorruptLog {
        offset: n as u64,
        reason: "missing or truncated header line".into(),
    })?;
    let (magic, version) = header.split_once('\t').unwrap_or((header, ""));
    if magic != FORMAT_MAGIC {
        return Err(Error::CorruptLog {
            offset: 0,
            reason: format!("not a canonical review log (header {header:?})"),
        });
    }
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION.into(),
            found: version.into(),
        });
    }
    offset += n as u64;
    let mut log = CanonicalLog::default();
    loop {
        line.clear();
        let n = rdr.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let corrupt = |reason: String| Error::CorruptLog { offset, reason };
        let Some(body) = line.strip_suffix('\n') else {
            return Err(corrupt("truncated record (no line terminator)".into()));
        };
        let f: Vec<&str> = body.split('\t').collect();
        if f.len() != 7 {
            return Err(corrupt(format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| corrupt(format!("bad {what} {s:?}")))
        };
        let (start, end) = (num(f[2], "start")?, num(f[3], "end")?);
        let same = log
            .sequences
            .last()
            .is_some_and(|s| s.user == f[0] && s.item == f[1] && s.start.to_bits() == start.to_bits());
        if !same {
            log.sequences.push(ReviewSequence::new(f[0], f[1], start, end));
        }
        if f[4] != "-" {
            let recall = match f[5] {
                "1" => true,
                "0" => false,
                other => return Err(corrupt(format!("bad recall flag {other:?}"))),
            };
            let p_recall = if f[6].is_empty() { None } else { Some(num(f[6], "p_recall")?) };
            let t = num(f[4], "t")?;
            if let Some(s) = log.sequences.last_mut() {
                s.events.push(ReviewEvent { t, recall, p_recall });
            }
        }
        offset += n as u64;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "p_recall,timestamp,delta,user_id,learning_language,ui_language,lexeme_id,lexeme_string,history_seen,history_correct,session_seen,session_correct\n";

    fn row(user: &str, item: &str, ts: i64, delta: i64, seen: u64, correct: u64) -> RawSessionRow {
        RawSessionRow {
            p_recall: correct as f64 / seen as f64,
            timestamp: ts,
            delta,
            user_id: user.into(),
            item_id: item.into(),
            history_seen: 0,
            history_correct: 0,
            session_seen: seen,
            session_correct: correct,
        }
    }

    #[test]
    fn parse_examples() {
        let csv = format!(
            "{HEADER}0.5,1000,60,u1,de,en,w1,x,3,2,2,2\n1,abc,60,u1,de,en,w2,x,1,1,1,1\n0.75,2000,10,u2,de,en,w1,x,1,1,4,3\n"
        );
        let rep = parse_csv(csv.as_bytes()).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].p_recall, 1.0);
        assert_eq!(rep.rows[1].p_recall, 0.75);
        assert_eq!(rep.errors.len(), 1);
        assert_eq!(rep.errors[0].line, 3);
        assert!(rep.errors[0].message.contains("timestamp"));
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let rep = parse_csv("".as_bytes()).unwrap();
        assert!(rep.rows.is_empty() && rep.errors.is_empty());
        let rep = parse_csv(HEADER.as_bytes()).unwrap();
        assert!(rep.rows.is_empty() && rep.errors.is_empty());
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = parse_csv("timestamp,delta,user_id\n1,2,u\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "lexeme_id"));
    }

    #[test]
    fn collapse_rules() {
        let cfg = IngestConfig {
            min_user_events: 1,
            min_item_events: 1,
            coalesce_seconds: 0,
        };
        let rows = vec![
            row("u", "w", 86_400, 86_400, 4, 3),
            row("u", "w", 86_400, 0, 2, 2),
            row("u", "w", 3 * 86_400, 2 * 86_400, 2, 2),
        ];
        let log = collapse_and_filter(&rows, &cfg).unwrap();
        let s = &log.sequences[0];
        assert_eq!(s.len(), 2);
        assert_eq!(s.events[0].t, 1.0);
        assert_eq!(s.events[0].p_recall, Some(5.0 / 6.0));
        assert!(!s.events[0].recall);
        assert_eq!(s.events[1].t, 3.0);
        assert!(s.events[1].recall);
        let single = collapse_and_filter(&[row("u", "w", 10, 5, 4, 3)], &cfg).unwrap();
        assert_eq!(single.sequences[0].events[0].p_recall, Some(0.75));
        assert!(!single.sequences[0].events[0].recall);
    }

    #[test]
    fn user_below_threshold_is_dropped() {
        let mut rows = Vec::new();
        for i in 0..29 {
            rows.push(row("few", &format!("w{}", i % 3), 1000 * (i + 1), 10, 1, 1));
        }
        for i in 0..30 {
            rows.push(row("many", &format!("w{}", i % 3), 1000 * (i + 1), 10, 1, 1));
        }
        let cfg = IngestConfig {
            min_item_events: 1,
            ..Default::default()
        };
        let log = collapse_and_filter(&rows, &cfg).unwrap();
        assert!(log.sequences.iter().all(|s| s.user == "many"));
        assert_eq!(log.event_count(), 30);
    }

    #[test]
    fn filtering_reaches_a_fixed_point() {
        // Dropping user `b` pushes item `y` below its threshold, which then
        // pushes user `a` below its own.
        let mut rows = Vec::new();
        let mut ts = 0;
        let mut add = |u: &str, w: &str, n: usize| {
            for _ in 0..n {
                ts += 100;
                rows.push(row(u, w, ts, 10, 1, 1));
            }
        };
        add("a", "x", 2);
        add("a", "y", 1);
        add("b", "y", 1);
        add("c", "x", 3);
        let cfg = IngestConfig {
            min_user_events: 3,
            min_item_events: 2,
            coalesce_seconds: 0,
        };
        let log = collapse_and_filter(&rows, &cfg).unwrap();
        assert_eq!(refilter(&log, &cfg), log);
        assert!(log.sequences.iter().all(|s| s.user == "c"));
    }

    #[test]
    fn round_trip_is_exact() {
        let mut s = ReviewSequence::new("u1", "w1", 0.0, 1.0 / 3.0);
        s.events.push(ReviewEvent {
            t: 0.1 + 0.2,
            recall: true,
            p_recall: Some(1.0),
        });
        s.events.push(ReviewEvent::new(1.0 / 3.0, false));
        let log = CanonicalLog {
            sequences: vec![s, ReviewSequence::new("u2", "w1", 0.0, 5.0)],
        };
        let mut buf = Vec::new();
        write_log(&log, &mut buf).unwrap();
        assert_eq!(read_log(buf.as_slice()).unwrap(), log);

        let mut empty = Vec::new();
        write_log(&CanonicalLog::default(), &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), "#memorize-log\tv1\n");
    }

    #[test]
    fn truncation_and_version_errors() {
        let mut buf = Vec::new();
        let mut s = ReviewSequence::new("u", "w", 0.0, 2.0);
        s.events = vec![ReviewEvent::new(1.0, true), ReviewEvent::new(2.0, false)];
        write_log(&CanonicalLog { sequences: vec![s] }, &mut buf).unwrap();
        let first_record = buf.iter().position(|&b| b == b'\n').unwrap() + 1;
        let second_record = first_record + buf[first_record..].iter().position(|&b| b == b'\n').unwrap() + 1;
        let cut = &buf[..buf.len() - 3];
        match read_log(cut).unwrap_err() {
            Error::CorruptLog { offset, .. } => assert_eq!(offset, second_record as u64),
            e => panic!("{e}"),
        }
        let err = read_log("#memorize-log\tv9\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("v9"));
    }
}
