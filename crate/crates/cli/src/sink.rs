//! Rating sink: newline-delimited records to a local file, optionally
//! mirrored as JSON POSTs to an HTTP endpoint.
//!
//! The file is the source of truth — every record is spooled locally
//! before any network attempt, so an unreachable sink degrades to a
//! warning, never to data loss.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

/// One emitted score record.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreRecord {
    Window { song_id: String, window_start: f64, score: f64 },
    SongFinal { song_id: String, score: f64 },
}

impl ScoreRecord {
    fn as_line(&self) -> String {
        match self {
            ScoreRecord::Window { song_id, window_start, score } => {
                format!("{song_id},{window_start},{score}")
            }
            ScoreRecord::SongFinal { song_id, score } => format!("{song_id},final,{score}"),
        }
    }

    fn as_json(&self) -> serde_json::Value {
        match self {
            ScoreRecord::Window { song_id, window_start, score } => serde_json::json!({
                "song_id": song_id,
                "window_start": window_start,
                "score": score,
            }),
            ScoreRecord::SongFinal { song_id, score } => serde_json::json!({
                "song_id": song_id,
                "score": score,
                "final": true,
            }),
        }
    }
}

/// File-backed sink with optional HTTP mirroring.
pub struct RatingSink {
    file: std::io::BufWriter<std::fs::File>,
    url: Option<String>,
    /// POST failures so far; the first one logs a warning.
    pub post_failures: u64,
    pub records: u64,
}

impl RatingSink {
    pub fn create(path: impl AsRef<Path>, url: Option<String>) -> Result<Self> {
        let file = std::fs::File::create(&path)
            .with_context(|| format!("creating sink file {}", path.as_ref().display()))?;
        Ok(Self { file: std::io::BufWriter::new(file), url, post_failures: 0, records: 0 })
    }

    pub fn emit(&mut self, record: &ScoreRecord) -> Result<()> {
        writeln!(self.file, "{}", record.as_line())?;
        self.file.flush()?;
        self.records += 1;
        if let Some(url) = &self.url {
            let body = record.as_json().to_string();
            let sent = ureq::post(url)
                .header("content-type", "application/json")
                .send(body.as_bytes());
            if sent.is_err() {
                if self.post_failures == 0 {
                    eprintln!(
                        "warning: rating sink {url} unreachable; scores are spooled locally"
                    );
                }
                self.post_failures += 1;
            }
        }
        Ok(())
    }
}
