//! Signal conditioning: DC removal, mains notch, zero-phase band-pass
//! filtering, analytic-signal envelopes, and analysis-window placement.
//!
//! The band-pass is a 4th-order recursive Butterworth (2nd-order prototype
//! transformed low-pass → band-pass) applied forward-backward, so the net
//! response has zero phase and squared magnitude. Filters run as cascaded
//! biquad sections with steady-state initial conditions and odd-reflection
//! edge padding, which keeps start/end transients small.
//!
//! The analytic signal is computed spectrally over a whole song segment so
//! edge artifacts land at song boundaries; per-sample validity masks flag
//! the tapered edges and windows are cut from the valid interior.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use crate::bands::{Band, BandCatalog, BandDef};
use crate::session::{Segment, SegmentKind, Session};

/// Errors from the DSP layer.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DspError {
    #[error("invalid frequency {0} Hz for sampling rate {1} Hz")]
    InvalidFrequency(f64, f64),
    #[error("band {0} invalid for sampling rate {1} Hz")]
    InvalidBand(String, f64),
    #[error("signal too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("window length {0} s outside the supported [{1}, {2}] s range")]
    BadWindowLength(f64, f64, f64),
    #[error("overlap fraction {0} outside [0, 0.9]")]
    BadOverlap(f64),
}

/// Supported analysis window length range, seconds.
pub const WINDOW_RANGE_S: (f64, f64) = (30.0, 100.0);

/// Default edge taper flagged invalid at each end of a processed segment.
pub const DEFAULT_EDGE_TAPER_S: f64 = 0.5;

// ── Basic conditioning ───────────────────────────────────────────────────────

/// Subtract the mean so the output averages to zero.
pub fn remove_dc(signal: &[f64]) -> Vec<f64> {
    if signal.is_empty() {
        return Vec::new();
    }
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    signal.iter().map(|v| v - mean).collect()
}

// ── Second-order sections ────────────────────────────────────────────────────

/// One biquad: numerator (b0, b1, b2), denominator (1, a1, a2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Sos {
    /// DC gain of this section.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Steady-state DF2T state for a unit step input.
    fn unit_zi(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }
}

/// Run a biquad cascade over `x` once (direct form II transposed), with each
/// section's state initialized to its steady-state response for the first
/// input sample.
fn sosfilt(sections: &[Sos], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    let mut scale = if x.is_empty() { 0.0 } else { x[0] };
    for s in sections {
        let zi = s.unit_zi();
        let mut z1 = zi[0] * scale;
        let mut z2 = zi[1] * scale;
        for v in y.iter_mut() {
            let xin = *v;
            let out = s.b[0] * xin + z1;
            z1 = s.b[1] * xin - s.a[0] * out + z2;
            z2 = s.b[2] * xin - s.a[1] * out;
            *v = out;
        }
        scale *= s.dc_gain();
    }
    y
}

/// Zero-phase filtering: odd-reflection padding, forward pass, backward pass.
///
/// The pad length is clamped to the signal length, so short inputs degrade
/// gracefully instead of erroring.
pub fn sosfiltfilt(sections: &[Sos], x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let ntaps = 2 * sections.len() + 1;
    let padlen = (3 * ntaps).min(x.len() - 1);

    // odd reflection: 2*x[0] - x[k] mirrored on both ends
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for k in (1..=padlen).rev() {
        ext.push(2.0 * x[0] - x[k]);
    }
    ext.extend_from_slice(x);
    for k in (1..=padlen).rev() {
        ext.push(2.0 * x[n - 1] - x[n - 1 - k]);
    }

    let forward = sosfilt(sections, &ext);
    let mut rev: Vec<f64> = forward.into_iter().rev().collect();
    rev = sosfilt(sections, &rev);
    rev.reverse();
    rev[padlen..padlen + n].to_vec()
}

// ── Filter design ────────────────────────────────────────────────────────────

/// Design the 4th-order Butterworth band-pass for `band` at rate `fs`,
/// as two cascaded biquads (bilinear transform with prewarped edges,
/// unity gain at the warped band center).
pub fn butter_bandpass_sos(band: &BandDef, fs: f64) -> Result<Vec<Sos>, DspError> {
    if !band.valid_for(fs) {
        return Err(DspError::InvalidBand(band.band.name().into(), fs));
    }
    const N: usize = 2; // prototype order; band-pass order is 2N

    // Butterworth prototype poles (unit cutoff, left half-plane)
    let proto: Vec<Complex64> = (1..=N)
        .map(|k| {
            let theta = PI * (2 * k + N - 1) as f64 / (2 * N) as f64;
            Complex64::new(theta.cos(), theta.sin())
        })
        .collect();

    // prewarped analog edges
    let k_bl = 2.0 * fs;
    let w1 = k_bl * (PI * band.low_hz / fs).tan();
    let w2 = k_bl * (PI * band.high_hz / fs).tan();
    let bw = w2 - w1;
    let w0sq = w1 * w2;

    // low-pass → band-pass: each prototype pole becomes a pair
    let mut analog_poles = Vec::with_capacity(2 * N);
    for &p in &proto {
        let b = bw * p * 0.5;
        let d = (b * b - w0sq).sqrt();
        analog_poles.push(b + d);
        analog_poles.push(b - d);
    }

    // bilinear transform; N analog zeros at s=0 → digital zeros at z=+1,
    // N zeros at infinity → z=−1
    let digital_poles: Vec<Complex64> = analog_poles
        .iter()
        .map(|&s| (Complex64::new(k_bl, 0.0) + s) / (Complex64::new(k_bl, 0.0) - s))
        .collect();

    // overall gain: k = bw^N * Re( k_bl^N / Π (k_bl − s_p) )
    let denom: Complex64 = analog_poles
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, &s| acc * (Complex64::new(k_bl, 0.0) - s));
    let gain = bw.powi(N as i32) * (Complex64::new(k_bl.powi(N as i32), 0.0) / denom).re;

    // group into conjugate pairs, ordered by pole angle: the lower-frequency
    // pair takes the (z−1)² zeros, the higher-frequency pair the (z+1)² zeros
    let mut upper: Vec<Complex64> = digital_poles.iter().copied().filter(|p| p.im >= 0.0).collect();
    upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    debug_assert_eq!(upper.len(), N);

    // zeros: the lower-frequency pole pair takes (z−1)², the higher-frequency
    // pair (z+1)²; the overall gain rides on the first section
    let mut sections = Vec::with_capacity(N);
    for (i, p) in upper.iter().enumerate() {
        let a = [-2.0 * p.re, p.norm_sqr()];
        let b = if i == 0 { [gain, -2.0 * gain, gain] } else { [1.0, 2.0, 1.0] };
        sections.push(Sos { b, a });
    }
    Ok(sections)
}

/// Design the mains notch at `center_hz` (default 50 Hz callers pass in) as
/// a single biquad with zeros on the unit circle (Q = 35).
pub fn notch_sos(center_hz: f64, fs: f64) -> Result<Vec<Sos>, DspError> {
    if !(center_hz > 0.0 && center_hz < fs / 2.0) {
        return Err(DspError::InvalidFrequency(center_hz, fs));
    }
    const Q: f64 = 35.0;
    let w0 = 2.0 * PI * center_hz / fs;
    let alpha = w0.sin() / (2.0 * Q);
    let a0 = 1.0 + alpha;
    Ok(vec![Sos {
        b: [1.0 / a0, -2.0 * w0.cos() / a0, 1.0 / a0],
        a: [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
    }])
}

/// Zero-phase mains notch.
pub fn notch_filter(signal: &[f64], center_hz: f64, fs: f64) -> Result<Vec<f64>, DspError> {
    let sos = notch_sos(center_hz, fs)?;
    Ok(sosfiltfilt(&sos, signal))
}

/// Zero-phase band-pass to one catalog band.
pub fn bandpass(signal: &[f64], band: &BandDef, fs: f64) -> Result<Vec<f64>, DspError> {
    let sos = butter_bandpass_sos(band, fs)?;
    Ok(sosfiltfilt(&sos, signal))
}

/// Text report of designed coefficients for every catalog band plus the
/// notch — diagnostics only.
pub fn filter_coefficient_report(catalog: &BandCatalog, notch_hz: f64, fs: f64) -> String {
    let mut out = String::new();
    out.push_str(&format!("# filter coefficients at fs={fs} Hz\n"));
    if let Ok(sos) = notch_sos(notch_hz, fs) {
        out.push_str(&format!("notch {notch_hz} Hz\n"));
        for s in &sos {
            out.push_str(&format!(
                "  b {} {} {}  a 1 {} {}\n",
                s.b[0], s.b[1], s.b[2], s.a[0], s.a[1]
            ));
        }
    }
    for def in catalog.defs() {
        match butter_bandpass_sos(def, fs) {
            Ok(sos) => {
                out.push_str(&format!("band {} {}-{} Hz\n", def.band, def.low_hz, def.high_hz));
                for s in &sos {
                    out.push_str(&format!(
                        "  b {} {} {}  a 1 {} {}\n",
                        s.b[0], s.b[1], s.b[2], s.a[0], s.a[1]
                    ));
                }
            }
            Err(e) => out.push_str(&format!("band {}: {e}\n", def.band)),
        }
    }
    out
}

// ── Analytic signal & envelope ───────────────────────────────────────────────

/// Compute the analytic signal via the spectral method: zero the negative
/// frequencies, double the positive ones, keep DC (and Nyquist for even
/// lengths). The real part of the result is the input itself.
pub fn analytic_signal(signal: &[f64]) -> Result<Vec<Complex64>, DspError> {
    let n = signal.len();
    if n < 8 {
        return Err(DspError::TooShort { got: n, need: 8 });
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);

    let half = n / 2;
    if n.is_multiple_of(2) {
        for v in buf.iter_mut().take(half).skip(1) {
            *v *= 2.0;
        }
        for v in buf.iter_mut().skip(half + 1) {
            *v = Complex64::new(0.0, 0.0);
        }
    } else {
        for v in buf.iter_mut().take(half + 1).skip(1) {
            *v *= 2.0;
        }
        for v in buf.iter_mut().skip(half + 1) {
            *v = Complex64::new(0.0, 0.0);
        }
    }

    ifft.process(&mut buf);
    let scale = 1.0 / n as f64;
    // pin the real part to the exact input; the FFT round trip only touches
    // it at the rounding level
    for (v, &x) in buf.iter_mut().zip(signal) {
        *v = Complex64::new(x, v.im * scale);
    }
    Ok(buf)
}

/// Instantaneous amplitude, phase, and validity from an analytic series.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    /// Modulus of the analytic signal, ≥ 0.
    pub amplitude: Vec<f64>,
    /// Argument in (−π, π].
    pub phase: Vec<f64>,
    /// False inside the edge taper at either end.
    pub valid: Vec<bool>,
}

/// Split an analytic series into envelope/phase and flag the first and last
/// `edge_taper_s` seconds invalid.
pub fn envelope_phase(analytic: &[Complex64], edge_taper_s: f64, fs: f64) -> Envelope {
    let n = analytic.len();
    let taper = ((edge_taper_s * fs).round() as usize).min(n / 2);
    let mut amplitude = Vec::with_capacity(n);
    let mut phase = Vec::with_capacity(n);
    for z in analytic {
        amplitude.push(z.norm());
        // atan2 returns (−π, π]; map −π (possible for re<0, im=−0.0) up
        let mut ph = z.im.atan2(z.re);
        if ph <= -PI {
            ph = PI;
        }
        phase.push(ph);
    }
    let mut valid = vec![true; n];
    for k in 0..taper {
        valid[k] = false;
        valid[n - 1 - k] = false;
    }
    Envelope { amplitude, phase, valid }
}

// ── Rhythm series & analysis windows ─────────────────────────────────────────

/// Per-channel, per-band instantaneous amplitude and phase over one song.
#[derive(Debug, Clone)]
pub struct RhythmSeries {
    pub channel: usize,
    pub band: Band,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub valid: Vec<bool>,
}

/// All rhythm series for one song segment: the 4×7 channel-band grid plus
/// the sample grid they share.
#[derive(Debug, Clone)]
pub struct SongRhythms {
    pub song_id: String,
    /// Session time of sample 0, seconds.
    pub start_time: f64,
    pub fs: f64,
    pub n_samples: usize,
    /// Indexed `[channel][band index in catalog order]`.
    series: Vec<Vec<RhythmSeries>>,
}

impl SongRhythms {
    /// Assemble a grid from precomputed series (test oracles, simulators).
    /// Series must be indexed `[channel][band index]` with equal lengths.
    pub fn from_series(
        song_id: impl Into<String>,
        start_time: f64,
        fs: f64,
        series: Vec<Vec<RhythmSeries>>,
    ) -> Self {
        let n_samples = series
            .first()
            .and_then(|ch| ch.first())
            .map(|s| s.amplitude.len())
            .unwrap_or(0);
        for ch in &series {
            for s in ch {
                assert_eq!(s.amplitude.len(), n_samples, "ragged rhythm grid");
                assert_eq!(s.phase.len(), n_samples);
                assert_eq!(s.valid.len(), n_samples);
            }
        }
        Self { song_id: song_id.into(), start_time, fs, n_samples, series }
    }

    pub fn series(&self, channel: usize, band: Band) -> &RhythmSeries {
        &self.series[channel][band.index()]
    }

    pub fn channel_count(&self) -> usize {
        self.series.len()
    }
}

/// Full conditioning for one song: DC removal, optional mains notch, then
/// per catalog band a zero-phase band-pass, analytic signal, and envelope.
///
/// The analytic signal runs over the whole song so spectral edge artifacts
/// sit at song boundaries, where the taper marks them invalid.
pub fn compute_song_rhythms(
    song_id: &str,
    start_time: f64,
    channels: &[Vec<f64>],
    fs: f64,
    catalog: &BandCatalog,
    notch_hz: Option<f64>,
    edge_taper_s: f64,
) -> Result<SongRhythms, DspError> {
    let n = channels.first().map(|c| c.len()).unwrap_or(0);
    if n < 8 {
        return Err(DspError::TooShort { got: n, need: 8 });
    }
    let mut grid = Vec::with_capacity(channels.len());
    for (ch, raw) in channels.iter().enumerate() {
        debug_assert_eq!(raw.len(), n, "channel length mismatch");
        let mut x = remove_dc(raw);
        if let Some(hz) = notch_hz {
            x = notch_filter(&x, hz, fs)?;
        }
        let mut per_band = Vec::with_capacity(catalog.len());
        for def in catalog.defs() {
            let banded = bandpass(&x, def, fs)?;
            let analytic = analytic_signal(&banded)?;
            let env = envelope_phase(&analytic, edge_taper_s, fs);
            per_band.push(RhythmSeries {
                channel: ch,
                band: def.band,
                amplitude: env.amplitude,
                phase: env.phase,
                valid: env.valid,
            });
        }
        grid.push(per_band);
    }
    Ok(SongRhythms {
        song_id: song_id.to_string(),
        start_time,
        fs,
        n_samples: n,
        series: grid,
    })
}

/// Borrowed view of one rhythm series restricted to a window.
#[derive(Debug, Clone, Copy)]
pub struct RhythmWindow<'a> {
    pub amplitude: &'a [f64],
    pub phase: &'a [f64],
    pub valid: &'a [bool],
}

/// One analysis window bound to its song's rhythm grid.
#[derive(Debug, Clone, Copy)]
pub struct AnalysisWindow<'a> {
    pub rhythms: &'a SongRhythms,
    /// Window start in session time, seconds.
    pub start: f64,
    /// Sample offset of the window inside the song.
    pub offset: usize,
    /// Window length in samples.
    pub len: usize,
}

impl<'a> AnalysisWindow<'a> {
    /// Bind a placement to its song's rhythms, or `None` if the span does
    /// not fit inside the available samples.
    pub fn bind(rhythms: &'a SongRhythms, span: &WindowSpan) -> Option<Self> {
        let offset = ((span.start - rhythms.start_time) * rhythms.fs).round();
        let len = (span.length * rhythms.fs).round();
        if offset < 0.0 || len <= 0.0 {
            return None;
        }
        let (offset, len) = (offset as usize, len as usize);
        if offset + len > rhythms.n_samples {
            return None;
        }
        Some(Self { rhythms, start: span.start, offset, len })
    }

    pub fn song_id(&self) -> &str {
        &self.rhythms.song_id
    }

    pub fn fs(&self) -> f64 {
        self.rhythms.fs
    }

    pub fn length_s(&self) -> f64 {
        self.len as f64 / self.rhythms.fs
    }

    pub fn slice(&self, channel: usize, band: Band) -> RhythmWindow<'a> {
        let s = self.rhythms.series(channel, band);
        let r = self.offset..self.offset + self.len;
        RhythmWindow {
            amplitude: &s.amplitude[r.clone()],
            phase: &s.phase[r.clone()],
            valid: &s.valid[r],
        }
    }
}

/// Placement of one analysis window inside a song segment.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSpan {
    pub song_id: String,
    /// Window start in session time, seconds.
    pub start: f64,
    /// Window length, seconds.
    pub length: f64,
}

/// A song that cannot host a single analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct SongTooShort {
    pub song_id: String,
    pub duration: f64,
    pub needed: f64,
}

/// Window placement parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowParams {
    pub window_s: f64,
    pub overlap: f64,
    pub drop_head_s: f64,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self { window_s: 90.0, overlap: 0.5, drop_head_s: 5.0 }
    }
}

impl WindowParams {
    pub fn hop_s(&self) -> f64 {
        self.window_s * (1.0 - self.overlap)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if !(WINDOW_RANGE_S.0..=WINDOW_RANGE_S.1).contains(&self.window_s) {
            return Err(DspError::BadWindowLength(self.window_s, WINDOW_RANGE_S.0, WINDOW_RANGE_S.1));
        }
        if !(0.0..=0.9).contains(&self.overlap) {
            return Err(DspError::BadOverlap(self.overlap));
        }
        Ok(())
    }
}

/// Window start times inside one segment after dropping its head.
///
/// Starts step by `window · (1 − overlap)`; every window must end inside the
/// segment. A small epsilon absorbs accumulated float error at the tail.
pub fn window_starts(seg: &Segment, params: &WindowParams) -> Vec<f64> {
    let mut starts = Vec::new();
    if seg.kind != SegmentKind::Song {
        return starts;
    }
    let hop = params.hop_s();
    let eps = 1e-9 * seg.end.abs().max(1.0);
    let mut t = seg.start + params.drop_head_s;
    while t + params.window_s <= seg.end + eps {
        starts.push(t);
        t += hop;
    }
    starts
}

/// Place analysis windows over every song segment of a session.
///
/// Advertisements produce no windows; songs shorter than
/// `drop_head_s + window_s` produce none and are reported.
pub fn segment_windows(
    session: &Session,
    params: &WindowParams,
) -> Result<(Vec<WindowSpan>, Vec<SongTooShort>), DspError> {
    params.validate()?;
    let mut windows = Vec::new();
    let mut short = Vec::new();
    for seg in &session.segments {
        if seg.kind != SegmentKind::Song {
            continue;
        }
        let starts = window_starts(seg, params);
        if starts.is_empty() {
            short.push(SongTooShort {
                song_id: seg.song_id.clone(),
                duration: seg.duration(),
                needed: params.drop_head_s + params.window_s,
            });
            continue;
        }
        for s in starts {
            windows.push(WindowSpan {
                song_id: seg.song_id.clone(),
                start: s,
                length: params.window_s,
            });
        }
    }
    Ok((windows, short))
}
