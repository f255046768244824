//! Streaming ingest: decode OSC datagrams into tagged sample frames and
//! build a live session with song/advertisement boundaries.
//!
//! The device sends unstamped EEG messages, so frames are stamped on
//! arrival with nominal 220 Hz spacing between frames of one datagram (and
//! from stream start when replaying a capture). Session markers ride the
//! same transport as OSC messages:
//!
//! ```text
//! /muse/eeg ,ffff <TP9> <FP1> <FP2> <TP10>      one sample frame
//! /marker   ,sssf "start" <song_id> <kind> <t>  open a segment (t optional)
//! /marker   ,sf   "end" <t>                     close the active segment
//! /rating   ,si   <song_id> <1..5>              post-hoc rating
//! ```
//!
//! Malformed datagrams are counted and skipped; the stream never stops on
//! them. Gaps longer than three sample periods are recorded as dropouts.

use std::io::Write;
use std::path::Path;

use crate::osc::{encode_packet, parse_packet, OscArg, OscMessage, OscPacket};
use crate::session::{ChannelLayout, SampleFrame, Segment, SegmentKind, Session};

/// Wire schema: which OSC addresses carry what.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EegSchema {
    pub eeg_address: String,
    pub marker_address: String,
    pub rating_address: String,
}

impl Default for EegSchema {
    fn default() -> Self {
        Self {
            eeg_address: "/muse/eeg".into(),
            marker_address: "/marker".into(),
            rating_address: "/rating".into(),
        }
    }
}

/// Decode errors for single EEG messages and replay files.
#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("address {got:?} does not match configured {want:?}")]
    AddressMismatch { got: String, want: String },
    #[error("expected {expected} float args, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("replay file truncated at byte {0}")]
    TruncatedReplay(u64),
}

/// Decode one EEG message into a frame stamped with `clock`.
pub fn decode_eeg_message(
    msg: &OscMessage,
    layout: &ChannelLayout,
    clock: f64,
    eeg_address: &str,
) -> Result<SampleFrame, StreamError> {
    if msg.address != eeg_address {
        return Err(StreamError::AddressMismatch {
            got: msg.address.clone(),
            want: eeg_address.to_string(),
        });
    }
    let floats: Vec<f64> = msg.floats().map(|v| v as f64).collect();
    let expected = layout.channel_count();
    if floats.len() != expected || msg.args.len() != expected {
        return Err(StreamError::ArityMismatch { expected, got: floats.len() });
    }
    Ok(SampleFrame { timestamp: clock, values: floats })
}

/// A segment boundary event.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkerEvent {
    Start { song_id: String, kind: SegmentKind, time: Option<f64> },
    End { time: Option<f64> },
}

/// Parse a `/marker` message; `None` when the shape is wrong.
pub fn decode_marker_message(msg: &OscMessage) -> Option<MarkerEvent> {
    let mut args = msg.args.iter();
    let OscArg::Str(cmd) = args.next()? else { return None };
    match cmd.as_str() {
        "start" => {
            let OscArg::Str(song_id) = args.next()? else { return None };
            let OscArg::Str(kind) = args.next()? else { return None };
            let kind = SegmentKind::from_name(kind)?;
            let time = match args.next() {
                Some(OscArg::Float(t)) => Some(*t as f64),
                None => None,
                _ => return None,
            };
            Some(MarkerEvent::Start { song_id: song_id.clone(), kind, time })
        }
        "end" => {
            let time = match args.next() {
                Some(OscArg::Float(t)) => Some(*t as f64),
                None => None,
                _ => return None,
            };
            Some(MarkerEvent::End { time })
        }
        _ => None,
    }
}

/// One frame as emitted by the stream, tagged with its segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedFrame {
    pub frame: SampleFrame,
    /// Segment the frame belongs to, if any.
    pub song_id: Option<String>,
    /// True for advertisement frames and frames outside any segment.
    pub excluded: bool,
}

/// A recorded timestamp gap longer than three sample periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub before: f64,
    pub after: f64,
}

/// Stream counters and annotations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamStats {
    pub frames: u64,
    pub parse_errors: u64,
    pub ignored_messages: u64,
    pub dropouts: Vec<Dropout>,
}

struct ActiveSegment {
    song_id: String,
    kind: SegmentKind,
    start: f64,
}

/// Live session builder fed by OSC datagrams.
///
/// Single producer; push datagrams in arrival order and call
/// [`FrameStream::finish`] to close the session.
pub struct FrameStream {
    schema: EegSchema,
    layout: ChannelLayout,
    fs: f64,
    session: Session,
    /// Frames stamped so far; replay timestamps are `count / fs` exactly,
    /// which keeps them bit-identical to synthesized session files.
    frame_count: u64,
    /// Arrival-time base for the current datagram, when live.
    live_base: Option<(f64, u64)>,
    last_frame_t: Option<f64>,
    active: Option<ActiveSegment>,
    pub stats: StreamStats,
}

impl FrameStream {
    pub fn new(schema: EegSchema, layout: ChannelLayout, fs: f64) -> Self {
        let mut session = Session::empty();
        session.sampling_rate = fs;
        session.layout = layout.clone();
        Self {
            schema,
            layout,
            fs,
            session,
            frame_count: 0,
            live_base: None,
            last_frame_t: None,
            active: None,
            stats: StreamStats::default(),
        }
    }

    fn close_active(&mut self, end: f64) {
        if let Some(active) = self.active.take() {
            if end > active.start {
                self.session.segments.push(Segment {
                    song_id: active.song_id,
                    kind: active.kind,
                    start: active.start,
                    end,
                });
            }
        }
    }

    fn handle_marker(&mut self, event: MarkerEvent) {
        match event {
            MarkerEvent::Start { song_id, kind, time } => {
                let t = time.unwrap_or_else(|| self.clock());
                self.close_active(t);
                self.active = Some(ActiveSegment { song_id, kind, start: t });
            }
            MarkerEvent::End { time } => {
                let t = time.unwrap_or_else(|| self.clock());
                self.close_active(t);
            }
        }
    }

    /// The stamp the next frame would receive.
    pub fn clock(&self) -> f64 {
        let t = match self.live_base {
            Some((base, first_count)) => {
                base + (self.frame_count - first_count) as f64 / self.fs
            }
            None => self.frame_count as f64 / self.fs,
        };
        // never step backwards, whatever the arrival clock claimed
        match self.last_frame_t {
            Some(last) if t < last => last,
            _ => t,
        }
    }

    /// Feed one datagram. `arrival` is the monotonic receive time in
    /// seconds for live sources; `None` stamps frames at nominal 220 Hz
    /// spacing from stream start (replay).
    ///
    /// Malformed datagrams are counted, never fatal.
    pub fn push_datagram(&mut self, bytes: &[u8], arrival: Option<f64>) -> Vec<TaggedFrame> {
        let packet = match parse_packet(bytes) {
            Ok(p) => p,
            Err(_) => {
                self.stats.parse_errors += 1;
                return Vec::new();
            }
        };
        // arrival restarts the intra-datagram spacing from the receive time
        self.live_base = arrival.map(|t| (t, self.frame_count));
        let mut out = Vec::new();
        for msg in packet.messages() {
            if msg.address == self.schema.eeg_address {
                let clock = self.clock();
                match decode_eeg_message(msg, &self.layout, clock, &self.schema.eeg_address) {
                    Ok(frame) => {
                        self.frame_count += 1;
                        if let Some(last) = self.last_frame_t {
                            if frame.timestamp - last > 3.0 / self.fs {
                                self.stats
                                    .dropouts
                                    .push(Dropout { before: last, after: frame.timestamp });
                            }
                        }
                        self.last_frame_t = Some(frame.timestamp);
                        self.stats.frames += 1;

                        let (song_id, excluded) = match &self.active {
                            Some(a) if frame.timestamp >= a.start => (
                                Some(a.song_id.clone()),
                                a.kind == SegmentKind::Advertisement,
                            ),
                            _ => (None, true),
                        };
                        self.session.frames.push(frame.clone());
                        out.push(TaggedFrame { frame, song_id, excluded });
                    }
                    Err(_) => self.stats.parse_errors += 1,
                }
            } else if msg.address == self.schema.marker_address {
                match decode_marker_message(msg) {
                    Some(event) => self.handle_marker(event),
                    None => self.stats.parse_errors += 1,
                }
            } else if msg.address == self.schema.rating_address {
                match (&msg.args.first(), &msg.args.get(1)) {
                    (Some(OscArg::Str(id)), Some(OscArg::Int(score)))
                        if (1..=5).contains(score) =>
                    {
                        self.session.ratings.insert(id.clone(), *score as u8);
                    }
                    _ => self.stats.parse_errors += 1,
                }
            } else {
                self.stats.ignored_messages += 1;
            }
        }
        out
    }

    /// Current (incomplete) session view.
    pub fn session(&self) -> &Session {
        &self.session
    }

    /// The open (not yet closed) segment: id, kind, and start time.
    pub fn active_segment(&self) -> Option<(&str, SegmentKind, f64)> {
        self.active.as_ref().map(|a| (a.song_id.as_str(), a.kind, a.start))
    }

    /// Close any open segment and hand back the finished session.
    pub fn finish(mut self) -> (Session, StreamStats) {
        let end = self.clock();
        self.close_active(end);
        (self.session, self.stats)
    }
}

// ── Session ⇄ datagrams ──────────────────────────────────────────────────────

/// Encode a session as the datagram sequence a live device would have
/// produced: marker start/end around each segment (with explicit times),
/// one EEG message per frame, and trailing rating messages.
pub fn session_to_datagrams(session: &Session, schema: &EegSchema) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let push_msg = |out: &mut Vec<Vec<u8>>, msg: OscMessage| {
        out.push(encode_packet(&OscPacket::Message(msg)).expect("valid synthetic message"));
    };

    let mut frame_idx = 0usize;
    for seg in &session.segments {
        push_msg(
            &mut out,
            OscMessage::new(
                schema.marker_address.clone(),
                vec![
                    OscArg::Str("start".into()),
                    OscArg::Str(seg.song_id.clone()),
                    OscArg::Str(seg.kind.name().into()),
                    OscArg::Float(seg.start as f32),
                ],
            ),
        );
        while frame_idx < session.frames.len()
            && session.frames[frame_idx].timestamp < seg.end
        {
            let f = &session.frames[frame_idx];
            if f.timestamp >= seg.start {
                push_msg(
                    &mut out,
                    OscMessage::new(
                        schema.eeg_address.clone(),
                        f.values.iter().map(|&v| OscArg::Float(v as f32)).collect(),
                    ),
                );
            }
            frame_idx += 1;
        }
        push_msg(
            &mut out,
            OscMessage::new(
                schema.marker_address.clone(),
                vec![OscArg::Str("end".into()), OscArg::Float(seg.end as f32)],
            ),
        );
    }
    for (id, &score) in &session.ratings {
        push_msg(
            &mut out,
            OscMessage::new(
                schema.rating_address.clone(),
                vec![OscArg::Str(id.clone()), OscArg::Int(score as i32)],
            ),
        );
    }
    out
}

/// Write datagrams as a length-prefixed capture: `u32` big-endian payload
/// size, then the payload, repeated.
pub fn write_replay(path: impl AsRef<Path>, datagrams: &[Vec<u8>]) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for d in datagrams {
        file.write_all(&(d.len() as u32).to_be_bytes())?;
        file.write_all(d)?;
    }
    file.flush()
}

/// Read a length-prefixed capture back into datagrams.
pub fn read_replay(path: impl AsRef<Path>) -> Result<Vec<Vec<u8>>, StreamError> {
    let bytes = std::fs::read(path)?;
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        if pos + 4 > bytes.len() {
            return Err(StreamError::TruncatedReplay(pos as u64));
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if pos + len > bytes.len() {
            return Err(StreamError::TruncatedReplay(pos as u64));
        }
        out.push(bytes[pos..pos + len].to_vec());
        pos += len;
    }
    Ok(out)
}

/// Rebuild a session by replaying captured datagrams through a fresh
/// [`FrameStream`].
pub fn session_from_datagrams(
    datagrams: &[Vec<u8>],
    schema: &EegSchema,
    layout: &ChannelLayout,
    fs: f64,
) -> (Session, StreamStats) {
    let mut stream = FrameStream::new(schema.clone(), layout.clone(), fs);
    for d in datagrams {
        stream.push_datagram(d, None);
    }
    stream.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{alpha_linked_rule, gen_synthetic_session, SessionOptions};

    fn eeg_datagram(values: [f32; 4]) -> Vec<u8> {
        encode_packet(&OscPacket::Message(OscMessage::new(
            "/muse/eeg",
            values.iter().map(|&v| OscArg::Float(v)).collect(),
        )))
        .unwrap()
    }

    fn marker_datagram(args: Vec<OscArg>) -> Vec<u8> {
        encode_packet(&OscPacket::Message(OscMessage::new("/marker", args))).unwrap()
    }

    #[test]
    fn decode_eeg_maps_channels_positionally() {
        let layout = ChannelLayout::default();
        let msg = OscMessage::new(
            "/muse/eeg",
            vec![
                OscArg::Float(10.0),
                OscArg::Float(20.0),
                OscArg::Float(30.0),
                OscArg::Float(40.0),
            ],
        );
        let frame = decode_eeg_message(&msg, &layout, 1.25, "/muse/eeg").unwrap();
        assert_eq!(frame.timestamp, 1.25);
        assert_eq!(frame.values, vec![10.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn decode_eeg_rejects_wrong_address_and_arity() {
        let layout = ChannelLayout::default();
        let wrong_addr = OscMessage::new("/muse/acc", vec![OscArg::Float(0.0); 4]);
        assert!(matches!(
            decode_eeg_message(&wrong_addr, &layout, 0.0, "/muse/eeg"),
            Err(StreamError::AddressMismatch { .. })
        ));
        let three = OscMessage::new("/muse/eeg", vec![OscArg::Float(0.0); 3]);
        assert!(matches!(
            decode_eeg_message(&three, &layout, 0.0, "/muse/eeg"),
            Err(StreamError::ArityMismatch { expected: 4, got: 3 })
        ));
        // non-float args don't count toward arity
        let ints = OscMessage::new("/muse/eeg", vec![OscArg::Int(1); 4]);
        assert!(matches!(
            decode_eeg_message(&ints, &layout, 0.0, "/muse/eeg"),
            Err(StreamError::ArityMismatch { expected: 4, got: 0 })
        ));
    }

    #[test]
    fn frames_are_tagged_with_the_active_song() {
        let mut stream =
            FrameStream::new(EegSchema::default(), ChannelLayout::default(), 220.0);
        stream.push_datagram(
            &marker_datagram(vec![
                OscArg::Str("start".into()),
                OscArg::Str("song-1".into()),
                OscArg::Str("song".into()),
            ]),
            None,
        );
        let mut emitted = 0;
        for _ in 0..220 {
            let frames = stream.push_datagram(&eeg_datagram([1.0, 2.0, 3.0, 4.0]), None);
            emitted += frames.len();
            for f in frames {
                assert_eq!(f.song_id.as_deref(), Some("song-1"));
                assert!(!f.excluded);
            }
        }
        assert_eq!(emitted, 220);
        let (session, stats) = stream.finish();
        assert_eq!(stats.frames, 220);
        assert_eq!(session.segments.len(), 1);
        assert_eq!(session.segments[0].song_id, "song-1");
        // 220 frames at 220 Hz ⇒ the segment closes at 1.0 s
        assert!((session.segments[0].end - 1.0).abs() < 1e-9);
    }

    #[test]
    fn advertisement_frames_are_excluded() {
        let mut stream =
            FrameStream::new(EegSchema::default(), ChannelLayout::default(), 220.0);
        stream.push_datagram(
            &marker_datagram(vec![
                OscArg::Str("start".into()),
                OscArg::Str("ad-1".into()),
                OscArg::Str("advertisement".into()),
            ]),
            None,
        );
        let frames = stream.push_datagram(&eeg_datagram([0.0; 4]), None);
        assert!(frames[0].excluded);
        assert_eq!(frames[0].song_id.as_deref(), Some("ad-1"));
    }

    #[test]
    fn corrupt_datagrams_are_counted_and_skipped() {
        let mut stream =
            FrameStream::new(EegSchema::default(), ChannelLayout::default(), 220.0);
        let good = eeg_datagram([1.0, 1.0, 1.0, 1.0]);
        let mut total = 0;
        for i in 0..100 {
            if i == 50 {
                total += stream.push_datagram(b"garbage!", None).len();
            } else {
                total += stream.push_datagram(&good, None).len();
            }
        }
        assert_eq!(total, 99);
        assert_eq!(stream.stats.parse_errors, 1);
        assert_eq!(stream.stats.frames, 99);
    }

    #[test]
    fn frames_never_reorder_and_clock_is_monotonic() {
        let mut stream =
            FrameStream::new(EegSchema::default(), ChannelLayout::default(), 220.0);
        let mut last = -1.0;
        for k in 0..500 {
            // arrival times jitter but never persuade the clock backwards
            let arrival = if k % 7 == 0 { None } else { Some(k as f64 / 220.0 - 0.001) };
            for f in stream.push_datagram(&eeg_datagram([0.0; 4]), arrival) {
                assert!(f.frame.timestamp >= last);
                last = f.frame.timestamp;
            }
        }
    }

    #[test]
    fn gaps_longer_than_three_periods_become_dropouts() {
        let mut stream =
            FrameStream::new(EegSchema::default(), ChannelLayout::default(), 220.0);
        stream.push_datagram(&eeg_datagram([0.0; 4]), Some(0.0));
        stream.push_datagram(&eeg_datagram([0.0; 4]), Some(0.1)); // 22 periods later
        let (_, stats) = stream.finish();
        assert_eq!(stats.dropouts.len(), 1);
        assert!((stats.dropouts[0].after - stats.dropouts[0].before) > 3.0 / 220.0);
    }

    #[test]
    fn synthetic_session_round_trips_through_datagrams() {
        let opts = SessionOptions { song_duration_s: 35.0, ads_every: Some(1), ..Default::default() };
        let session = gen_synthetic_session(2, alpha_linked_rule(2.0, 0.3), &opts, 21).unwrap();
        let schema = EegSchema::default();
        let datagrams = session_to_datagrams(&session, &schema);
        let (rebuilt, stats) =
            session_from_datagrams(&datagrams, &schema, &session.layout, session.sampling_rate);
        assert_eq!(stats.parse_errors, 0);
        assert_eq!(rebuilt.frames.len(), session.frames.len());
        // f32 quantization at generation makes the round trip exact
        for (a, b) in rebuilt.frames.iter().zip(&session.frames) {
            assert_eq!(a.values, b.values);
            assert!((a.timestamp - b.timestamp).abs() < 1e-9);
        }
        assert_eq!(rebuilt.ratings, session.ratings);
        assert_eq!(rebuilt.segments.len(), session.segments.len());
        for (a, b) in rebuilt.segments.iter().zip(&session.segments) {
            assert_eq!(a.song_id, b.song_id);
            assert_eq!(a.kind, b.kind);
            // marker times ride the wire as f32
            assert!((a.start - b.start).abs() < 1e-3);
            assert!((a.end - b.end).abs() < 1e-3);
        }
    }

    #[test]
    fn replay_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("capture.osc");
        let datagrams = vec![eeg_datagram([1.0, 2.0, 3.0, 4.0]), b"junk".to_vec()];
        write_replay(&path, &datagrams).unwrap();
        let back = read_replay(&path).unwrap();
        assert_eq!(back, datagrams);

        // truncated capture is detected
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_replay(&path), Err(StreamError::TruncatedReplay(_))));
    }
}
