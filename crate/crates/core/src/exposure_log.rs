//! Listening-log ingestion: parsing raw play records and turning them into
//! ordered, truncated exposure sequences per (user, track) pair.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD_SECONDS: f64 = 30.0;
pub const DEFAULT_TRUNCATION_LIMIT: usize = 40;

/// Column names shared by every log file this crate reads or writes.
pub const RAW_COLUMNS: [&str; 4] = ["user_id", "track_id", "timestamp", "listen_seconds"];

/// One play of a track by a user, as found in the raw log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub user_id: String,
    pub track_id: String,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    pub listen_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<RawRecord>,
    /// Lines that could not be decoded or violated record invariants.
    pub skipped: usize,
}

/// Reads every well-formed record, in input order. Malformed lines and
/// negative durations are skipped and counted; a missing or incomplete
/// header, or an I/O failure, is fatal.
pub fn parse_records<R: BufRead>(reader: R, format: LogFormat) -> Result<ParseOutcome> {
    match format {
        LogFormat::Csv => parse_csv(reader),
        LogFormat::Jsonl => parse_jsonl(reader),
    }
}

fn valid(record: &RawRecord) -> bool {
    record.listen_seconds.is_finite() && record.listen_seconds >= 0.0
}

fn parse_csv<R: BufRead>(reader: R) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Input(format!("cannot read header: {e}")))?
        .clone();
    for col in RAW_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Input(format!("header is missing column `{col}`")));
        }
    }

    let mut out = ParseOutcome::default();
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => match row.deserialize::<RawRecord>(Some(&headers)) {
                Ok(rec) if valid(&rec) => out.records.push(rec),
                _ => out.skipped += 1,
            },
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}

fn parse_jsonl<R: BufRead>(reader: R) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawRecord>(&line) {
            Ok(rec) if valid(&rec) => out.records.push(rec),
            _ => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Whether a play counts as a listening event. The comparison is inclusive.
#[inline]
pub fn binarize(record: &RawRecord, threshold_seconds: f64) -> bool {
    listened(record.listen_seconds, threshold_seconds)
}

#[inline]
fn listened(listen_seconds: f64, threshold_seconds: f64) -> bool {
    listen_seconds >= threshold_seconds
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureEvent {
    /// 1-based ordinal of this exposure within its pair.
    pub exposure_index: u32,
    pub timestamp: i64,
    pub listen_seconds: f64,
    pub listened: bool,
}

/// The exposure history of one user with one track.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub user_id: String,
    pub track_id: String,
    pub events: Vec<ExposureEvent>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Sessionized exposures, ordered by (user_id, track_id).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceStore {
    sequences: Vec<Sequence>,
    truncation_limit: usize,
    threshold_seconds: f64,
    dropped: usize,
}

impl SequenceStore {
    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn truncation_limit(&self) -> usize {
        self.truncation_limit
    }

    pub fn threshold_seconds(&self) -> f64 {
        self.threshold_seconds
    }

    /// Events discarded because they came after the truncation limit.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn n_pairs(&self) -> usize {
        self.sequences.len()
    }

    pub fn n_events(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Keeps the sequences accepted by `keep`; counters carry over unchanged.
    pub fn retain<F: FnMut(&Sequence) -> bool>(&self, mut keep: F) -> SequenceStore {
        SequenceStore {
            sequences: self.sequences.iter().filter(|s| keep(s)).cloned().collect(),
            truncation_limit: self.truncation_limit,
            threshold_seconds: self.threshold_seconds,
            dropped: self.dropped,
        }
    }

    /// Writes the store in the raw log schema extended with
    /// `exposure_index,listened`.
    pub fn export<W: Write>(&self, writer: W, format: LogFormat) -> Result<()> {
        match format {
            LogFormat::Csv => {
                let mut w = csv::Writer::from_writer(writer);
                for seq in &self.sequences {
                    for ev in &seq.events {
                        w.serialize(ExportRow::new(seq, ev))?;
                    }
                }
                w.flush()?;
            }
            LogFormat::Jsonl => {
                let mut w = std::io::BufWriter::new(writer);
                for seq in &self.sequences {
                    for ev in &seq.events {
                        serde_json::to_writer(&mut w, &ExportRow::new(seq, ev))
                            .map_err(|e| Error::Input(e.to_string()))?;
                        w.write_all(b"\n")?;
                    }
                }
                w.flush()?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ExportRow<'a> {
    user_id: &'a str,
    track_id: &'a str,
    timestamp: i64,
    listen_seconds: f64,
    exposure_index: u32,
    listened: u8,
}

impl<'a> ExportRow<'a> {
    fn new(seq: &'a Sequence, ev: &ExposureEvent) -> Self {
        ExportRow {
            user_id: &seq.user_id,
            track_id: &seq.track_id,
            timestamp: ev.timestamp,
            listen_seconds: ev.listen_seconds,
            exposure_index: ev.exposure_index,
            listened: ev.listened as u8,
        }
    }
}

/// Groups records by (user, track), orders each group by timestamp (ties
/// keep input order), numbers exposures from 1 and discards everything after
/// `truncation_limit`.
pub fn sessionize<I>(
    records: I,
    truncation_limit: usize,
    threshold_seconds: f64,
) -> Result<SequenceStore>
where
    I: IntoIterator<Item = RawRecord>,
{
    if truncation_limit == 0 {
        return Err(Error::InvalidArgument(
            "truncation limit must be at least 1".into(),
        ));
    }
    if !(threshold_seconds > 0.0 && threshold_seconds.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "threshold seconds must be positive, got {threshold_seconds}"
        )));
    }

    // user -> track -> (timestamp, listen_seconds) in input order
    let mut groups: BTreeMap<String, BTreeMap<String, Vec<(i64, f64)>>> = BTreeMap::new();
    for rec in records {
        let tracks = match groups.get_mut(rec.user_id.as_str()) {
            Some(t) => t,
            None => groups.entry(rec.user_id).or_default(),
        };
        let plays = match tracks.get_mut(rec.track_id.as_str()) {
            Some(p) => p,
            None => tracks.entry(rec.track_id).or_default(),
        };
        plays.push((rec.timestamp, rec.listen_seconds));
    }

    let mut sequences = Vec::new();
    let mut dropped = 0;
    for (user_id, tracks) in groups {
        for (track_id, mut plays) in tracks {
            plays.sort_by_key(|&(ts, _)| ts);
            if plays.len() > truncation_limit {
                dropped += plays.len() - truncation_limit;
                plays.truncate(truncation_limit);
            }
            let events = plays
                .into_iter()
                .enumerate()
                .map(|(i, (timestamp, listen_seconds))| ExposureEvent {
                    exposure_index: i as u32 + 1,
                    timestamp,
                    listen_seconds,
                    listened: listened(listen_seconds, threshold_seconds),
                })
                .collect();
            sequences.push(Sequence {
                user_id: user_id.clone(),
                track_id,
                events,
            });
        }
    }

    Ok(SequenceStore {
        sequences,
        truncation_limit,
        threshold_seconds,
        dropped,
    })
}

/// Keeps pairs that reached at least `required_length` exposures.
pub fn filter_complete(store: &SequenceStore, required_length: usize) -> Result<SequenceStore> {
    if required_length == 0 {
        return Err(Error::InvalidArgument(
            "required length must be at least 1".into(),
        ));
    }
    Ok(store.retain(|s| s.len() >= required_length))
}
