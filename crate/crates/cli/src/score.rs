//! Near-real-time stream scoring: replay captures or a live UDP port,
//! decoded into per-window scores and per-song means for the rating sink.
//!
//! Replay mode rebuilds the session from the capture and scores each song
//! through the exact offline path, so replayed scores equal offline scores.
//! Live mode scores each window the moment it completes, using the song's
//! samples received so far — provisional by nature (the lowest band's
//! filter transients near the window tail have not fully settled), but
//! emitted within the latency budget instead of at song end.

use std::net::UdpSocket;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};

use neuroscore_core::dsp::compute_song_rhythms;
use neuroscore_core::elm::{elm_predict, ElmModel};
use neuroscore_core::pipeline::{bind_window, per_song_means, score_session};
use neuroscore_core::session::{ChannelLayout, DEFAULT_SAMPLING_RATE};
use neuroscore_core::stats::BiomarkerSpec;
use neuroscore_core::stream::{read_replay, session_from_datagrams, FrameStream, StreamStats};

use crate::config::PipelineConfig;
use crate::sink::{RatingSink, ScoreRecord};

/// Counters from one scoring run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreStreamReport {
    pub frames: u64,
    pub parse_errors: u64,
    pub windows_scored: usize,
    pub songs_scored: usize,
}

fn check_model(model: &ElmModel, spec: &BiomarkerSpec) -> Result<()> {
    if model.input_dim != spec.ids.len() {
        bail!(
            "model expects {} features but the biomarker has {} (model/biomarker mismatch)",
            model.input_dim,
            spec.ids.len()
        );
    }
    Ok(())
}

/// Score a replayed capture: rebuild the session, run the offline scoring
/// path per song, and emit window scores plus per-song means in order.
pub fn score_replay(
    replay_path: &Path,
    model: &ElmModel,
    spec: &BiomarkerSpec,
    config: &PipelineConfig,
    sink: &mut RatingSink,
) -> Result<ScoreStreamReport> {
    check_model(model, spec)?;
    eprintln!("stage-log: score-stream modules=ingest,dsp,descriptors,elm");
    let datagrams =
        read_replay(replay_path).with_context(|| format!("reading {}", replay_path.display()))?;
    let (session, stats) = session_from_datagrams(
        &datagrams,
        &config.schema(),
        &ChannelLayout::default(),
        DEFAULT_SAMPLING_RATE,
    );
    let params = config.extract_params();
    let scores = score_session(&session, &spec.ids, model, &params)?;
    for s in &scores {
        sink.emit(&ScoreRecord::Window {
            song_id: s.song_id.clone(),
            window_start: s.start,
            score: s.score,
        })?;
    }
    let mut songs = 0;
    for (song_id, mean) in per_song_means(&scores) {
        sink.emit(&ScoreRecord::SongFinal { song_id, score: mean })?;
        songs += 1;
    }
    Ok(ScoreStreamReport {
        frames: stats.frames,
        parse_errors: stats.parse_errors,
        windows_scored: scores.len(),
        songs_scored: songs,
    })
}

// ── Live scoring ─────────────────────────────────────────────────────────────

struct LiveSong {
    song_id: String,
    channels: Vec<Vec<f64>>,
    times: Vec<f64>,
    next_window_start: f64,
    window_scores: Vec<f64>,
}

/// Incremental scorer for live datagrams. Push datagrams as they arrive;
/// each call returns the records that became ready.
pub struct LiveScorer {
    stream: FrameStream,
    model: ElmModel,
    spec: BiomarkerSpec,
    config: PipelineConfig,
    active: Option<LiveSong>,
    pub report: ScoreStreamReport,
}

impl LiveScorer {
    pub fn new(model: ElmModel, spec: BiomarkerSpec, config: PipelineConfig) -> Result<Self> {
        check_model(&model, &spec)?;
        let stream = FrameStream::new(
            config.schema(),
            ChannelLayout::default(),
            DEFAULT_SAMPLING_RATE,
        );
        Ok(Self {
            stream,
            model,
            spec,
            config,
            active: None,
            report: ScoreStreamReport::default(),
        })
    }

    fn close_song(&mut self, out: &mut Vec<ScoreRecord>) {
        if let Some(song) = self.active.take() {
            if !song.window_scores.is_empty() {
                let mean =
                    song.window_scores.iter().sum::<f64>() / song.window_scores.len() as f64;
                out.push(ScoreRecord::SongFinal { song_id: song.song_id, score: mean });
                self.report.songs_scored += 1;
            }
        }
    }

    /// Score every window that is complete given the data so far.
    fn drain_ready_windows(&mut self, out: &mut Vec<ScoreRecord>) -> Result<()> {
        let params = self.config.extract_params();
        let window_s = params.window.window_s;
        let hop = params.window.hop_s();
        loop {
            let Some(song) = self.active.as_mut() else { return Ok(()) };
            let window_end = song.next_window_start + window_s;
            let have_until = match song.times.last() {
                Some(&t) => t,
                None => return Ok(()),
            };
            if have_until < window_end {
                return Ok(());
            }
            let start = song.next_window_start;
            song.next_window_start += hop;

            // process the song-so-far and cut this window out of it
            let rhythms = compute_song_rhythms(
                &song.song_id,
                song.times[0],
                &song.channels,
                DEFAULT_SAMPLING_RATE,
                &params.catalog,
                params.notch_hz,
                params.edge_taper_s,
            )?;
            let window = match bind_window(&rhythms, &song.times, start, window_s) {
                Ok(w) => w,
                Err(_) => continue, // dropout-starved window; skip
            };
            let vector = match neuroscore_core::descriptors::descriptor_vector(
                &window,
                &ChannelLayout::default(),
                &params.catalog,
            ) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let features: Option<Vec<f64>> =
                self.spec.ids.iter().map(|id| vector.get(id)).collect();
            let Some(features) = features else { continue };
            let pred = elm_predict(&self.model, &[features])?;
            let song = self.active.as_mut().expect("active song");
            song.window_scores.push(pred[0].clipped);
            self.report.windows_scored += 1;
            out.push(ScoreRecord::Window {
                song_id: song.song_id.clone(),
                window_start: start,
                score: pred[0].clipped,
            });
        }
    }

    /// Feed one datagram (arrival in seconds since stream start).
    pub fn push(&mut self, datagram: &[u8], arrival: Option<f64>) -> Result<Vec<ScoreRecord>> {
        let mut out = Vec::new();
        let frames = self.stream.push_datagram(datagram, arrival);
        for tagged in frames {
            match (&tagged.song_id, tagged.excluded) {
                (Some(id), false) => {
                    let switched =
                        self.active.as_ref().map(|s| &s.song_id != id).unwrap_or(true);
                    if switched {
                        self.close_song(&mut out);
                        let start = self
                            .stream
                            .active_segment()
                            .filter(|(sid, _, _)| sid == id)
                            .map(|(_, _, t)| t)
                            .unwrap_or(tagged.frame.timestamp);
                        self.active = Some(LiveSong {
                            song_id: id.clone(),
                            channels: vec![Vec::new(); 4],
                            times: Vec::new(),
                            next_window_start: start + self.config.head_drop_s,
                            window_scores: Vec::new(),
                        });
                    }
                    let song = self.active.as_mut().expect("just set");
                    song.times.push(tagged.frame.timestamp);
                    for (c, v) in tagged.frame.values.iter().enumerate() {
                        song.channels[c].push(*v);
                    }
                }
                // advertisement or unmarked frame ends any open song
                _ => self.close_song(&mut out),
            }
        }
        self.drain_ready_windows(&mut out)?;
        let stats = self.stream.stats.clone();
        self.report.frames = stats.frames;
        self.report.parse_errors = stats.parse_errors;
        Ok(out)
    }

    /// Close the stream, emitting the final mean for any open song.
    pub fn finish(mut self) -> (Vec<ScoreRecord>, StreamStats, ScoreStreamReport) {
        let mut out = Vec::new();
        self.close_song(&mut out);
        let (_, stats) = self.stream.finish();
        let mut report = self.report;
        report.frames = stats.frames;
        report.parse_errors = stats.parse_errors;
        (out, stats, report)
    }
}

/// Listen on a UDP port and score until `duration_s` elapses (0 = forever).
pub fn score_udp(
    port: u16,
    model: ElmModel,
    spec: BiomarkerSpec,
    config: PipelineConfig,
    sink: &mut RatingSink,
    duration_s: f64,
) -> Result<ScoreStreamReport> {
    let socket = UdpSocket::bind(("0.0.0.0", port))
        .with_context(|| format!("binding UDP port {port}"))?;
    socket.set_read_timeout(Some(Duration::from_millis(200)))?;
    eprintln!("listening on udp/{port}");

    let mut scorer = LiveScorer::new(model, spec, config)?;
    let started = Instant::now();
    let mut buf = [0u8; 64 * 1024];
    loop {
        if duration_s > 0.0 && started.elapsed().as_secs_f64() >= duration_s {
            break;
        }
        match socket.recv_from(&mut buf) {
            Ok((len, _)) => {
                let arrival = started.elapsed().as_secs_f64();
                for record in scorer.push(&buf[..len], Some(arrival))? {
                    sink.emit(&record)?;
                }
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue
            }
            Err(e) => return Err(e.into()),
        }
    }
    let (records, _, report) = scorer.finish();
    for record in records {
        sink.emit(&record)?;
    }
    Ok(report)
}
