//! On-disk record types and their line-oriented readers/writers.
//!
//! * `news.jsonl`        — one [`RawNews`] per line
//! * `impressions.jsonl` — one [`RawImpression`] per line
//! * `clicks.tsv`        — `user \t newsId \t ts`

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawNews {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub entities: Vec<String>,
    pub publish_ts: i64,
    #[serde(default)]
    pub topic: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawImpression {
    pub user: String,
    pub ts: i64,
    /// `(newsId, clicked)` with `clicked ∈ {0, 1}`.
    pub items: Vec<(String, u8)>,
}

impl RawImpression {
    pub fn positives(&self) -> usize {
        self.items.iter().filter(|(_, c)| *c == 1).count()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.items.is_empty() {
            return Err("impression shows no items".into());
        }
        if let Some((id, c)) = self.items.iter().find(|(_, c)| *c > 1) {
            return Err(format!("item {id} has click label {c}, expected 0 or 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub user: String,
    pub news_id: String,
    pub ts: i64,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_news(path: &Path) -> Result<Vec<RawNews>> {
    read_jsonl(path)
}

pub fn read_impressions(path: &Path) -> Result<Vec<RawImpression>> {
    let records: Vec<RawImpression> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|message| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
    }
    Ok(records)
}

pub fn read_clicks(path: &Path) -> Result<Vec<ClickEvent>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if fields.len() != 3 {
            return Err(bad(format!(
                "expected 3 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let ts = fields[2]
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad timestamp {:?}: {e}", fields[2])))?;
        out.push(ClickEvent {
            user: fields[0].to_string(),
            news_id: fields[1].to_string(),
            ts,
        });
    }
    Ok(out)
}

pub fn write_clicks(path: &Path, clicks: &[ClickEvent]) -> Result<()> {
    let mut w = create(path)?;
    for c in clicks {
        writeln!(w, "{}\t{}\t{}", c.user, c.news_id, c.ts).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
