//! End-to-end orchestration: session → per-song rhythms → windows →
//! descriptor tables → scores.
//!
//! Songs are processed whole (the analytic signal wants its edge artifacts
//! at song boundaries), then windows are cut from the valid interior and
//! descriptors computed per window. The same per-song path serves offline
//! extraction and replayed streams, which is what makes stream/offline
//! score parity exact.

use crate::bands::BandCatalog;
use crate::descriptors::{descriptor_vector, enumerate_catalog, DescriptorError, DescriptorId};
use crate::dsp::{
    compute_song_rhythms, segment_windows, AnalysisWindow, DspError, SongRhythms, SongTooShort,
    WindowParams, DEFAULT_EDGE_TAPER_S,
};
use crate::elm::{elm_predict, ElmError, ElmModel};
use crate::session::{Segment, SegmentKind, Session};
use crate::stats::{DescriptorTable, FeatureMatrix, StatsError};

/// Pipeline errors wrap the per-stage ones.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Elm(#[from] ElmError),
    #[error("session has no frames for segment {0}")]
    EmptySegment(String),
}

/// Extraction parameters: window placement plus signal conditioning.
#[derive(Debug, Clone)]
pub struct ExtractParams {
    pub window: WindowParams,
    pub catalog: BandCatalog,
    /// Mains notch center; `None` disables the notch.
    pub notch_hz: Option<f64>,
    pub edge_taper_s: f64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            window: WindowParams::default(),
            catalog: BandCatalog::default(),
            notch_hz: Some(50.0),
            edge_taper_s: DEFAULT_EDGE_TAPER_S,
        }
    }
}

/// A window skipped during extraction, with the reason.
#[derive(Debug, Clone)]
pub struct SkippedWindow {
    pub song_id: String,
    pub start: f64,
    pub reason: String,
}

/// Everything one extraction run produces.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub table: DescriptorTable,
    pub short_songs: Vec<SongTooShort>,
    pub skipped_windows: Vec<SkippedWindow>,
}

/// One song's samples pulled out of a session: per-channel series plus the
/// matching timestamps.
pub struct SongSamples {
    pub channels: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

/// Collect the frames of one segment into channel-major sample vectors.
pub fn song_samples(session: &Session, seg: &Segment) -> SongSamples {
    let nch = session.layout.channel_count();
    let mut channels = vec![Vec::new(); nch];
    let mut times = Vec::new();
    let start = session
        .frames
        .partition_point(|f| f.timestamp < seg.start);
    for f in &session.frames[start..] {
        if f.timestamp >= seg.end {
            break;
        }
        times.push(f.timestamp);
        for (c, v) in f.values.iter().enumerate() {
            channels[c].push(*v);
        }
    }
    SongSamples { channels, times }
}

/// Compute the rhythm grid for one song segment of a session.
pub fn song_rhythms(
    session: &Session,
    seg: &Segment,
    params: &ExtractParams,
) -> Result<(SongRhythms, Vec<f64>), PipelineError> {
    let samples = song_samples(session, seg);
    if samples.times.is_empty() {
        return Err(PipelineError::EmptySegment(seg.song_id.clone()));
    }
    let rhythms = compute_song_rhythms(
        &seg.song_id,
        samples.times[0],
        &samples.channels,
        session.sampling_rate,
        &params.catalog,
        params.notch_hz,
        params.edge_taper_s,
    )?;
    Ok((rhythms, samples.times))
}

/// Bind a window span to a song's sample grid by timestamp search, so
/// recordings with dropouts still window correctly. Windows with less than
/// 90% of their nominal samples are rejected.
pub fn bind_window<'a>(
    rhythms: &'a SongRhythms,
    times: &[f64],
    start: f64,
    length_s: f64,
) -> Result<AnalysisWindow<'a>, String> {
    let fs = rhythms.fs;
    let i0 = times.partition_point(|&t| t < start - 1e-9);
    let i1 = times.partition_point(|&t| t < start + length_s - 1e-9);
    let len = i1 - i0;
    let expected = (length_s * fs).round() as usize;
    if len < (0.9 * expected as f64) as usize {
        return Err(format!("window has {len} of {expected} samples"));
    }
    Ok(AnalysisWindow { rhythms, start, offset: i0, len })
}

/// Extract the full descriptor table for one session.
///
/// Row order is deterministic: segments in session order, windows in start
/// order. Ratings come from the session's rating map; windows of unrated
/// songs keep an empty rating and are skipped by training code.
pub fn extract_table(session: &Session, params: &ExtractParams) -> Result<Extraction, PipelineError> {
    params.window.validate().map_err(PipelineError::Dsp)?;
    let ids = enumerate_catalog(&session.layout, &params.catalog);
    let (spans, short_songs) = segment_windows(session, &params.window)?;

    let mut table = DescriptorTable {
        ids: ids.clone(),
        rows: Vec::new(),
        song_ids: Vec::new(),
        starts: Vec::new(),
        ratings: Vec::new(),
        window_s: params.window.window_s,
    };
    let mut skipped_windows = Vec::new();

    for seg in session.segments.iter().filter(|s| s.kind == SegmentKind::Song) {
        let song_spans: Vec<_> = spans.iter().filter(|w| w.song_id == seg.song_id).collect();
        if song_spans.is_empty() {
            continue;
        }
        let (rhythms, times) = song_rhythms(session, seg, params)?;
        let rating = session.ratings.get(&seg.song_id).map(|&r| r as f64);
        for span in song_spans {
            let window = match bind_window(&rhythms, &times, span.start, span.length) {
                Ok(w) => w,
                Err(reason) => {
                    skipped_windows.push(SkippedWindow {
                        song_id: seg.song_id.clone(),
                        start: span.start,
                        reason,
                    });
                    continue;
                }
            };
            match descriptor_vector(&window, &session.layout, &params.catalog) {
                Ok(vector) => {
                    let row: Vec<f64> = ids
                        .iter()
                        .map(|id| vector.get(id).unwrap_or(f64::NAN))
                        .collect();
                    table.rows.push(row);
                    table.song_ids.push(seg.song_id.clone());
                    table.starts.push(span.start);
                    table.ratings.push(rating);
                }
                Err(e) => skipped_windows.push(SkippedWindow {
                    song_id: seg.song_id.clone(),
                    start: span.start,
                    reason: e.to_string(),
                }),
            }
        }
    }
    Ok(Extraction { table, short_songs, skipped_windows })
}

/// Extractor closure for the window-length sweep: re-windows every session
/// at the requested length and restricts the tables to the biomarker ids.
pub fn sweep_extractor<'a>(
    sessions: &'a [Session],
    base: &'a ExtractParams,
    ids: &'a [DescriptorId],
) -> impl FnMut(f64) -> Result<(Vec<FeatureMatrix>, usize), StatsError> + 'a {
    move |length_s: f64| {
        let mut params = base.clone();
        params.window.window_s = length_s;
        let mut matrices = Vec::with_capacity(sessions.len());
        let mut skipped = 0usize;
        for session in sessions {
            let extraction = extract_table(session, &params)
                .map_err(|e| StatsError::SchemaMismatch(e.to_string()))?;
            skipped += extraction.short_songs.len();
            matrices.push(extraction.table.submatrix(ids)?);
        }
        Ok((matrices, skipped))
    }
}

// ── Scoring ──────────────────────────────────────────────────────────────────

/// One window's decoded score.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowScore {
    pub song_id: String,
    /// Window start in session time, seconds.
    pub start: f64,
    pub raw: f64,
    /// Clipped into the [1, 5] rating range.
    pub score: f64,
}

/// Score every window of a session with a trained model over a biomarker.
///
/// This is the canonical scoring path: the replay streamer calls it per
/// completed song, so replayed scores equal offline scores exactly.
pub fn score_session(
    session: &Session,
    biomarker: &[DescriptorId],
    model: &ElmModel,
    params: &ExtractParams,
) -> Result<Vec<WindowScore>, PipelineError> {
    let extraction = extract_table(session, params)?;
    score_table(&extraction.table, biomarker, model)
}

/// Score the rows of an extracted table (ratings not required).
pub fn score_table(
    table: &DescriptorTable,
    biomarker: &[DescriptorId],
    model: &ElmModel,
) -> Result<Vec<WindowScore>, PipelineError> {
    let cols: Vec<usize> = biomarker
        .iter()
        .map(|id| {
            table
                .ids
                .iter()
                .position(|i| i == id)
                .ok_or_else(|| StatsError::MissingFeature(id.canonical()))
        })
        .collect::<Result<_, _>>()
        .map_err(PipelineError::Stats)?;

    let mut out = Vec::new();
    for (r, row) in table.rows.iter().enumerate() {
        let features: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
        if features.iter().any(|v| !v.is_finite()) {
            continue; // incomplete window; skip rather than guess
        }
        let pred = elm_predict(model, &[features])?;
        out.push(WindowScore {
            song_id: table.song_ids[r].clone(),
            start: table.starts[r],
            raw: pred[0].raw,
            score: pred[0].clipped,
        });
    }
    Ok(out)
}

/// Collapse window scores into one mean score per song, in first-seen order.
pub fn per_song_means(scores: &[WindowScore]) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    let mut sums: std::collections::HashMap<String, (f64, usize)> = std::collections::HashMap::new();
    for s in scores {
        if !sums.contains_key(&s.song_id) {
            order.push(s.song_id.clone());
        }
        let e = sums.entry(s.song_id.clone()).or_insert((0.0, 0));
        e.0 += s.score;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|id| {
            let (sum, n) = sums[&id];
            (id, sum / n as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::Band;
    use crate::elm::{elm_train, Activation};
    use crate::synth::{alpha_linked_rule, gen_synthetic_session, SessionOptions};

    fn small_session(seed: u64) -> Session {
        let opts = SessionOptions { song_duration_s: 100.0, ..Default::default() };
        gen_synthetic_session(4, alpha_linked_rule(2.0, 0.3), &opts, seed).unwrap()
    }

    fn quick_params() -> ExtractParams {
        ExtractParams {
            window: WindowParams { window_s: 45.0, overlap: 0.5, drop_head_s: 5.0 },
            ..Default::default()
        }
    }

    #[test]
    fn extraction_yields_full_rows() {
        let session = small_session(5);
        let params = quick_params();
        let ext = extract_table(&session, &params).unwrap();
        assert_eq!(ext.table.ids.len(), 168);
        // 100 s song, 45 s window, hop 22.5, head 5: starts 5, 27.5, 50 → 3 windows
        assert_eq!(ext.table.rows.len(), 3 * 4);
        assert!(ext.short_songs.is_empty());
        assert!(ext.skipped_windows.is_empty());
        assert!(ext.table.ratings.iter().all(|r| r.is_some()));
        // every entry finite
        assert!(ext.table.rows.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn extraction_is_deterministic() {
        let session = small_session(6);
        let params = quick_params();
        let a = extract_table(&session, &params).unwrap();
        let b = extract_table(&session, &params).unwrap();
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn alpha_linkage_survives_the_full_chain() {
        let session = small_session(7);
        let params = quick_params();
        let table = extract_table(&session, &params).unwrap().table;
        let alpha_tp9 = DescriptorId::parse("rel_energy:alpha@TP9").unwrap();
        let m = table.submatrix(&[alpha_tp9]).unwrap();
        let xs: Vec<f64> = m.rows.iter().map(|r| r[0]).collect();
        let r = crate::stats::distance_correlation_1d(&xs, &m.ratings).unwrap();
        assert!(r > 0.6, "rel α vs rating R = {r}");
    }

    #[test]
    fn scoring_skips_incomplete_rows_and_scores_the_rest() {
        let session = small_session(8);
        let params = quick_params();
        let mut table = extract_table(&session, &params).unwrap().table;
        let ids: Vec<DescriptorId> = table.ids[..3].to_vec();
        // poison one row's first feature
        table.rows[2][0] = f64::NAN;
        let x: Vec<Vec<f64>> = table
            .rows
            .iter()
            .filter(|r| r[0].is_finite())
            .map(|r| r[..3].to_vec())
            .collect();
        let y: Vec<f64> = vec![3.0; x.len()];
        let model = elm_train(&x, &y, 4, 1, 1e-6, Activation::Logistic).unwrap();
        let scores = score_table(&table, &ids, &model).unwrap();
        assert_eq!(scores.len(), table.rows.len() - 1);
        assert!(scores.iter().all(|s| (1.0..=5.0).contains(&s.score)));
    }

    #[test]
    fn per_song_means_preserve_first_seen_order() {
        let scores = vec![
            WindowScore { song_id: "b".into(), start: 5.0, raw: 2.0, score: 2.0 },
            WindowScore { song_id: "a".into(), start: 5.0, raw: 4.0, score: 4.0 },
            WindowScore { song_id: "b".into(), start: 50.0, raw: 4.0, score: 4.0 },
        ];
        let means = per_song_means(&scores);
        assert_eq!(means, vec![("b".to_string(), 3.0), ("a".to_string(), 4.0)]);
    }

    #[test]
    fn dead_channel_marks_only_that_channels_energies_missing() {
        let mut session = small_session(9);
        // zero out channel 2 (FP2) entirely
        for f in session.frames.iter_mut() {
            f.values[2] = 0.0;
        }
        let params = quick_params();
        let ext = extract_table(&session, &params).unwrap();
        // rel/abs energies at FP2 should be missing (NaN) on every row;
        // TP9 energies stay intact
        let fp2 = DescriptorId::parse("rel_energy:alpha@FP2").unwrap();
        let tp9 = DescriptorId::parse("rel_energy:alpha@TP9").unwrap();
        let fp2_col = ext.table.ids.iter().position(|i| *i == fp2).unwrap();
        let tp9_col = ext.table.ids.iter().position(|i| *i == tp9).unwrap();
        assert!(ext.table.rows.iter().all(|r| r[fp2_col].is_nan()));
        assert!(ext.table.rows.iter().all(|r| r[tp9_col].is_finite()));
    }

    #[test]
    fn sweep_extractor_reports_short_songs() {
        let opts = SessionOptions { song_duration_s: 60.0, ..Default::default() };
        let session = gen_synthetic_session(2, alpha_linked_rule(2.0, 0.3), &opts, 3).unwrap();
        let params = ExtractParams::default();
        let ids = vec![DescriptorId::parse("rel_energy:alpha@TP9").unwrap()];
        let sessions = vec![session];
        let mut extract = sweep_extractor(&sessions, &params, &ids);
        // 60 s songs cannot host 90 s windows
        let (matrices, skipped) = extract(90.0).unwrap();
        assert_eq!(skipped, 2);
        assert!(matrices[0].rows.is_empty());
        // at 50 s they can
        let (matrices, skipped) = extract(50.0).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(matrices[0].rows.len(), 2);
    }

    #[test]
    fn rel_energy_tracks_the_injected_alpha_level() {
        // two hand-built songs: α at baseline vs α at 3× baseline
        use crate::synth::{gen_channels, independent_rule, SynthSpec};
        let catalog = BandCatalog::default();
        let params = quick_params();
        let mut session = Session::empty();
        let mut cursor = 0usize;
        for (i, alpha_amp) in [1.0, 3.0].iter().enumerate() {
            let mut plan = independent_rule(0.3)(0.5);
            for amps in plan.amplitudes.iter_mut() {
                amps[Band::Alpha.index()] = *alpha_amp;
            }
            let spec = SynthSpec { plan, duration_s: 60.0, fs: 220.0, seed: 50 + i as u64 };
            let channels = gen_channels(&spec, &catalog).unwrap();
            let n = channels[0].len();
            for k in 0..n {
                session.frames.push(crate::session::SampleFrame {
                    timestamp: (cursor + k) as f64 / 220.0,
                    values: channels.iter().map(|c| c[k]).collect(),
                });
            }
            session.segments.push(crate::session::Segment {
                song_id: format!("song-{i}"),
                kind: SegmentKind::Song,
                start: cursor as f64 / 220.0,
                end: (cursor + n) as f64 / 220.0,
            });
            session.ratings.insert(format!("song-{i}"), 3);
            cursor += n;
        }
        let table = extract_table(&session, &params).unwrap().table;
        let id = DescriptorId::parse("rel_energy:alpha@TP9").unwrap();
        let col = table.ids.iter().position(|i| *i == id).unwrap();
        let share_of = |song: &str| {
            let row = table.song_ids.iter().position(|s| s == song).unwrap();
            table.rows[row][col]
        };
        let baseline = share_of("song-0");
        let boosted = share_of("song-1");
        assert!(
            boosted > baseline + 0.1,
            "α share did not rise with amplitude: {baseline} → {boosted}"
        );
    }

    #[test]
    fn interleaved_advertisements_leave_window_count_unchanged() {
        let opts_plain = SessionOptions { song_duration_s: 60.0, ..Default::default() };
        let opts_ads = SessionOptions {
            song_duration_s: 60.0,
            ads_every: Some(1),
            ..Default::default()
        };
        let rule = alpha_linked_rule(2.0, 0.3);
        let plain = gen_synthetic_session(3, &rule, &opts_plain, 99).unwrap();
        let with_ads = gen_synthetic_session(3, &rule, &opts_ads, 99).unwrap();
        assert!(with_ads.segments.len() > plain.segments.len());
        let params = quick_params();
        let table_plain = extract_table(&plain, &params).unwrap().table;
        let table_ads = extract_table(&with_ads, &params).unwrap().table;
        // same songs, same windows, bit-identical descriptors; only the
        // absolute window start times shift
        assert!(!table_plain.rows.is_empty());
        assert_eq!(table_plain.rows, table_ads.rows);
        assert_eq!(table_plain.song_ids, table_ads.song_ids);
    }
}
