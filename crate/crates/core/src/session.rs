//! Recording sessions: channel layout, raw frames, song/advertisement
//! segments, and post-hoc integer ratings.
//!
//! Sessions serialize to a line-oriented UTF-8 text format:
//!
//! ```text
//! #session v1 rate=220 channels=TP9,FP1,FP2,TP10
//! F <t> <v1> <v2> <v3> <v4>      one frame, seconds + µV per channel
//! S <song_id> <kind> <t0> <t1>   one segment, kind ∈ {song, advertisement}
//! R <song_id> <1..5>             one rating per song
//! ```
//!
//! Reads are validated: segments must be time-ordered and disjoint, ratings
//! must reference song segments and stay within {1..5}. Writes are canonical
//! (frames, then segments, then ratings) and round-trip losslessly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Default sampling rate of the wearable headset, in Hz.
pub const DEFAULT_SAMPLING_RATE: f64 = 220.0;

/// A left/right homologous electrode pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairSite {
    Temporal,
    Frontal,
}

impl PairSite {
    pub fn name(self) -> &'static str {
        match self {
            PairSite::Temporal => "temporal",
            PairSite::Frontal => "frontal",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "temporal" => Some(PairSite::Temporal),
            "frontal" => Some(PairSite::Frontal),
            _ => None,
        }
    }
}

impl fmt::Display for PairSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The 4-electrode montage: ordered channel names plus the left/right pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelLayout {
    names: Vec<String>,
    /// (site, left channel index, right channel index)
    pairs: Vec<(PairSite, usize, usize)>,
}

impl Default for ChannelLayout {
    /// TP9, FP1, FP2, TP10 with temporal (TP9, TP10) and frontal (FP1, FP2)
    /// left/right pairs.
    fn default() -> Self {
        Self {
            names: ["TP9", "FP1", "FP2", "TP10"].iter().map(|s| s.to_string()).collect(),
            pairs: vec![(PairSite::Temporal, 0, 3), (PairSite::Frontal, 1, 2)],
        }
    }
}

impl ChannelLayout {
    pub fn channel_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Left/right channel indices for a pair site.
    pub fn pair(&self, site: PairSite) -> Option<(usize, usize)> {
        self.pairs
            .iter()
            .find(|(s, _, _)| *s == site)
            .map(|&(_, l, r)| (l, r))
    }

    pub fn pair_sites(&self) -> Vec<PairSite> {
        self.pairs.iter().map(|&(s, _, _)| s).collect()
    }
}

/// One timestamped multichannel sample (timestamp seconds, values µV).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    pub timestamp: f64,
    pub values: Vec<f64>,
}

/// Whether a segment is a rated song or an unrated advertisement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Song,
    Advertisement,
}

impl SegmentKind {
    pub fn name(self) -> &'static str {
        match self {
            SegmentKind::Song => "song",
            SegmentKind::Advertisement => "advertisement",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "song" => Some(SegmentKind::Song),
            "advertisement" => Some(SegmentKind::Advertisement),
            _ => None,
        }
    }
}

/// One playback segment in session time.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub song_id: String,
    pub kind: SegmentKind,
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// A full recording: frames plus segment annotations and ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub sampling_rate: f64,
    pub layout: ChannelLayout,
    pub frames: Vec<SampleFrame>,
    pub segments: Vec<Segment>,
    pub ratings: BTreeMap<String, u8>,
}

/// Session file and invariant errors.
#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Session {
    /// An empty session with the default montage and sampling rate.
    pub fn empty() -> Self {
        Self {
            sampling_rate: DEFAULT_SAMPLING_RATE,
            layout: ChannelLayout::default(),
            frames: Vec::new(),
            segments: Vec::new(),
            ratings: BTreeMap::new(),
        }
    }

    /// Check all session invariants: frame arity and time order, segment
    /// disjointness and order, rating keys and range.
    pub fn validate(&self) -> Result<(), SessionError> {
        let nch = self.layout.channel_count();
        if self.sampling_rate <= 0.0 {
            return Err(SessionError::InvariantViolation("sampling rate must be positive".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.values.len() != nch {
                return Err(SessionError::InvariantViolation(format!(
                    "frame {i} has {} values, expected {nch}",
                    f.values.len()
                )));
            }
            if i > 0 && f.timestamp < self.frames[i - 1].timestamp {
                return Err(SessionError::InvariantViolation(format!(
                    "frame {i} out of time order"
                )));
            }
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.end <= s.start {
                return Err(SessionError::InvariantViolation(format!(
                    "segment {} has non-positive duration",
                    s.song_id
                )));
            }
            if i > 0 && s.start < self.segments[i - 1].end {
                return Err(SessionError::InvariantViolation(format!(
                    "segments {} and {} overlap or are out of order",
                    self.segments[i - 1].song_id, s.song_id
                )));
            }
        }
        for (id, &score) in &self.ratings {
            if !(1..=5).contains(&score) {
                return Err(SessionError::InvariantViolation(format!(
                    "rating {score} for {id} outside {{1..5}}"
                )));
            }
            let is_song = self
                .segments
                .iter()
                .any(|s| s.kind == SegmentKind::Song && s.song_id == *id);
            if !is_song {
                return Err(SessionError::InvariantViolation(format!(
                    "rating for {id} has no matching song segment"
                )));
            }
        }
        Ok(())
    }

    /// Song segments only, in time order.
    pub fn songs(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Song)
    }

    /// Write to `path` in the v1 text format (canonical order).
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<(), SessionError> {
        self.validate()?;
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(
            w,
            "#session v1 rate={} channels={}",
            self.sampling_rate,
            self.layout.names().join(",")
        )?;
        for f in &self.frames {
            write!(w, "F {}", f.timestamp)?;
            for v in &f.values {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        for s in &self.segments {
            writeln!(w, "S {} {} {} {}", s.song_id, s.kind.name(), s.start, s.end)?;
        }
        for (id, score) in &self.ratings {
            writeln!(w, "R {id} {score}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a session file, validating every line and all invariants.
    pub fn read_from(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();

        let (_, header) = lines
            .next()
            .ok_or_else(|| SessionError::Format { line: 1, msg: "empty file".into() })?;
        let header = header?;
        let (rate, names) = parse_header(&header)
            .map_err(|msg| SessionError::Format { line: 1, msg })?;

        let layout = layout_from_names(&names)
            .map_err(|msg| SessionError::Format { line: 1, msg })?;
        let mut session = Session {
            sampling_rate: rate,
            layout,
            frames: Vec::new(),
            segments: Vec::new(),
            ratings: BTreeMap::new(),
        };
        let nch = session.layout.channel_count();

        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap();
            let fields: Vec<&str> = parts.collect();
            let ferr = |msg: String| SessionError::Format { line: lineno, msg };
            match tag {
                "F" => {
                    if fields.len() != nch + 1 {
                        return Err(ferr(format!(
                            "frame line needs {} fields, got {}",
                            nch + 1,
                            fields.len()
                        )));
                    }
                    let mut vals = fields.iter().map(|s| s.parse::<f64>());
                    let t = vals.next().unwrap().map_err(|e| ferr(format!("bad timestamp: {e}")))?;
                    let values: Result<Vec<f64>, _> = vals.collect();
                    let values = values.map_err(|e| ferr(format!("bad sample value: {e}")))?;
                    session.frames.push(SampleFrame { timestamp: t, values });
                }
                "S" => {
                    if fields.len() != 4 {
                        return Err(ferr(format!("segment line needs 4 fields, got {}", fields.len())));
                    }
                    let kind = SegmentKind::from_name(fields[1])
                        .ok_or_else(|| ferr(format!("unknown segment kind {:?}", fields[1])))?;
                    let start = fields[2].parse().map_err(|e| ferr(format!("bad start time: {e}")))?;
                    let end = fields[3].parse().map_err(|e| ferr(format!("bad end time: {e}")))?;
                    session.segments.push(Segment {
                        song_id: fields[0].to_string(),
                        kind,
                        start,
                        end,
                    });
                }
                "R" => {
                    if fields.len() != 2 {
                        return Err(ferr(format!("rating line needs 2 fields, got {}", fields.len())));
                    }
                    let score: i64 = fields[1].parse().map_err(|e| ferr(format!("bad rating: {e}")))?;
                    if !(1..=5).contains(&score) {
                        return Err(SessionError::InvariantViolation(format!(
                            "rating {score} for {} outside {{1..5}}",
                            fields[0]
                        )));
                    }
                    session.ratings.insert(fields[0].to_string(), score as u8);
                }
                other => return Err(ferr(format!("unknown record tag {other:?}"))),
            }
        }
        session.validate()?;
        Ok(session)
    }
}

fn parse_header(header: &str) -> Result<(f64, Vec<String>), String> {
    let mut parts = header.split_whitespace();
    if parts.next() != Some("#session") || parts.next() != Some("v1") {
        return Err("expected '#session v1' header".into());
    }
    let mut rate = None;
    let mut channels = None;
    for kv in parts {
        match kv.split_once('=') {
            Some(("rate", v)) => {
                rate = Some(v.parse::<f64>().map_err(|e| format!("bad rate: {e}"))?)
            }
            Some(("channels", v)) => {
                channels = Some(v.split(',').map(|s| s.to_string()).collect::<Vec<_>>())
            }
            _ => return Err(format!("unknown header field {kv:?}")),
        }
    }
    match (rate, channels) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err("header must carry rate= and channels=".into()),
    }
}

fn layout_from_names(names: &[String]) -> Result<ChannelLayout, String> {
    let default = ChannelLayout::default();
    if names == default.names() {
        Ok(default)
    } else {
        Err(format!(
            "unsupported channel set {:?}; expected {:?}",
            names,
            default.names()
        ))
    }
}
