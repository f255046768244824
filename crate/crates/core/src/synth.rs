//! Seeded synthetic EEG: band-limited noise, phase-amplitude-coupled
//! signals, and whole sessions with known score linkage.
//!
//! Band noise is synthesized spectrally — Gaussian coefficients on exactly
//! the FFT bins inside the band, zero elsewhere — so spectral containment
//! is exact and the RMS normalization makes amplitudes reproducible to the
//! bit. Session samples are quantized to f32 so a session written as OSC
//! float32 datagrams replays losslessly.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::bands::{Band, BandCatalog, BandDef, ALL_BANDS};
use crate::dsp::analytic_signal;
use crate::session::{SampleFrame, Segment, SegmentKind, Session};

/// Synthetic-generation errors.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("band {0} invalid for sampling rate {1} Hz")]
    InvalidBand(String, f64),
    #[error("bands {0} and {1} overlap; coupling needs disjoint support")]
    InvalidBands(String, String),
    #[error("coupling {0} outside [0, 1]")]
    BadCoupling(f64),
    #[error("duration {0} s × {1} Hz is not a whole number of samples")]
    FractionalSamples(f64, f64),
    #[error("rating {0} outside {{1..5}}")]
    BadRating(u8),
    #[error("channel {0} has no {1} component to carry a coupling link")]
    MissingLowBand(usize, String),
}

/// Derive a stream seed for one sub-generator (splitmix64 over seed ⊕ tag).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_count(duration_s: f64, fs: f64) -> Result<usize, SynthError> {
    let n = duration_s * fs;
    if (n - n.round()).abs() > 1e-6 {
        return Err(SynthError::FractionalSamples(duration_s, fs));
    }
    Ok(n.round() as usize)
}

/// Gaussian noise confined to `band`: spectral synthesis with unit-variance
/// complex coefficients on the in-band bins, normalized to `amplitude` RMS.
pub fn gen_band_noise(
    band: &BandDef,
    amplitude: f64,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<Vec<f64>, SynthError> {
    if !band.valid_for(fs) {
        return Err(SynthError::InvalidBand(band.band.name().into(), fs));
    }
    let n = sample_count(duration_s, fs)?;
    if n == 0 || amplitude == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    let mut any = false;
    for k in 1..n.div_ceil(2) {
        let f = k as f64 * fs / n as f64;
        if f >= band.low_hz && f < band.high_hz {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            spec[k] = Complex64::new(re, im);
            spec[n - k] = spec[k].conj();
            any = true;
        }
    }
    if !any {
        // band narrower than one bin at this length; degenerate but legal
        return Ok(vec![0.0; n]);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut spec);
    let mut x: Vec<f64> = spec.iter().map(|c| c.re / n as f64).collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        let gain = amplitude / rms;
        for v in x.iter_mut() {
            *v *= gain;
        }
    }
    Ok(x)
}

/// A coupled signal: the low band rides unmodified while the high band's
/// amplitude follows the low band's instantaneous phase,
/// `s = x_low + (1 + coupling·cos φ_low)·x_high + noise`.
pub fn gen_pac_signal(
    low: &BandDef,
    high: &BandDef,
    coupling: f64,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<Vec<f64>, SynthError> {
    if low.high_hz > high.low_hz {
        return Err(SynthError::InvalidBands(
            low.band.name().into(),
            high.band.name().into(),
        ));
    }
    if !(0.0..=1.0).contains(&coupling) {
        return Err(SynthError::BadCoupling(coupling));
    }
    let n = sample_count(duration_s, fs)?;
    let x_low = gen_band_noise(low, 1.0, duration_s, fs, derive_seed(seed, 1))?;
    let x_high = gen_band_noise(high, 1.0, duration_s, fs, derive_seed(seed, 2))?;
    let analytic = analytic_signal(&x_low).map_err(|_| SynthError::FractionalSamples(duration_s, fs))?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let noise_rms = 0.1;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let phi = analytic[k].im.atan2(analytic[k].re);
        let noise: f64 = rng.sample(StandardNormal);
        out.push(x_low[k] + (1.0 + coupling * phi.cos()) * x_high[k] + noise_rms * noise);
    }
    Ok(out)
}

// ── Whole-session synthesis ──────────────────────────────────────────────────

/// One phase-amplitude link within a channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacLink {
    pub channel: usize,
    pub low: Band,
    pub high: Band,
    pub coupling: f64,
}

/// Ground-truth recipe for one song's signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SongPlan {
    /// RMS amplitude per `[channel][band index]`, µV.
    pub amplitudes: Vec<[f64; 7]>,
    pub pac_links: Vec<PacLink>,
    /// RMS of the broadband noise floor, µV.
    pub noise_floor: f64,
    /// The listener rating this song will receive.
    pub rating: u8,
}

/// Full generation recipe for one contiguous signal block.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub plan: SongPlan,
    pub duration_s: f64,
    pub fs: f64,
    pub seed: u64,
}

/// Generate the multichannel signal for one spec.
pub fn gen_channels(spec: &SynthSpec, catalog: &BandCatalog) -> Result<Vec<Vec<f64>>, SynthError> {
    let n = sample_count(spec.duration_s, spec.fs)?;
    for link in &spec.plan.pac_links {
        if !(0.0..=1.0).contains(&link.coupling) {
            return Err(SynthError::BadCoupling(link.coupling));
        }
        if spec.plan.amplitudes[link.channel][link.low.index()] <= 0.0 {
            return Err(SynthError::MissingLowBand(link.channel, link.low.name().into()));
        }
    }
    let mut channels = Vec::with_capacity(spec.plan.amplitudes.len());
    for (ch, amps) in spec.plan.amplitudes.iter().enumerate() {
        let mut components: Vec<Vec<f64>> = Vec::with_capacity(ALL_BANDS.len());
        for band in ALL_BANDS {
            let amp = amps[band.index()];
            let def = catalog.get(band);
            let seed = derive_seed(spec.seed, (ch as u64) << 8 | band.index() as u64);
            components.push(gen_band_noise(def, amp, spec.duration_s, spec.fs, seed)?);
        }
        // apply coupling links: modulate the high-band component with the
        // phase of this channel's low-band component
        for link in spec.plan.pac_links.iter().filter(|l| l.channel == ch) {
            if catalog.get(link.low).high_hz > catalog.get(link.high).low_hz {
                return Err(SynthError::InvalidBands(
                    link.low.name().into(),
                    link.high.name().into(),
                ));
            }
            let analytic = analytic_signal(&components[link.low.index()])
                .map_err(|_| SynthError::FractionalSamples(spec.duration_s, spec.fs))?;
            let high = &mut components[link.high.index()];
            for k in 0..n {
                let phi = analytic[k].im.atan2(analytic[k].re);
                high[k] *= 1.0 + link.coupling * phi.cos();
            }
        }
        let mut signal = vec![0.0; n];
        for comp in &components {
            for (s, c) in signal.iter_mut().zip(comp) {
                *s += c;
            }
        }
        if spec.plan.noise_floor > 0.0 {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0xF100 + ch as u64));
            for s in signal.iter_mut() {
                let w: f64 = rng.sample(StandardNormal);
                *s += spec.plan.noise_floor * w;
            }
        }
        channels.push(signal);
    }
    Ok(channels)
}

// ── Score rules ──────────────────────────────────────────────────────────────

/// Map a latent level u ∈ [0, 1) to the integer rating 1..5.
pub fn rating_from_level(u: f64) -> u8 {
    (1 + (u * 5.0).floor() as i64).clamp(1, 5) as u8
}

fn flat_amplitudes(channels: usize) -> Vec<[f64; 7]> {
    vec![[1.0; 7]; channels]
}

/// Linear α linkage: the α band's amplitude grows linearly with the latent
/// level on every channel, so relative α energy tracks the rating.
pub fn alpha_linked_rule(gain: f64, noise_floor: f64) -> impl Fn(f64) -> SongPlan {
    move |u| {
        let mut amplitudes = flat_amplitudes(4);
        for amps in amplitudes.iter_mut() {
            amps[Band::Alpha.index()] = 1.0 + gain * u;
        }
        SongPlan { amplitudes, pac_links: Vec::new(), noise_floor, rating: rating_from_level(u) }
    }
}

/// Monotone nonlinear α linkage (quadratic in the latent level).
pub fn alpha_monotone_rule(gain: f64, noise_floor: f64) -> impl Fn(f64) -> SongPlan {
    move |u| {
        let mut amplitudes = flat_amplitudes(4);
        for amps in amplitudes.iter_mut() {
            amps[Band::Alpha.index()] = 1.0 + gain * u * u;
        }
        SongPlan { amplitudes, pac_links: Vec::new(), noise_floor, rating: rating_from_level(u) }
    }
}

/// γ_low→γ_high coupling at FP1 follows the latent level.
pub fn pac_linked_rule(noise_floor: f64) -> impl Fn(f64) -> SongPlan {
    move |u| SongPlan {
        amplitudes: flat_amplitudes(4),
        pac_links: vec![PacLink {
            channel: 1, // FP1
            low: Band::GammaLow,
            high: Band::GammaHigh,
            coupling: u,
        }],
        noise_floor,
        rating: rating_from_level(u),
    }
}

/// No linkage at all: fixed spectrum, rating drawn from the latent level.
pub fn independent_rule(noise_floor: f64) -> impl Fn(f64) -> SongPlan {
    move |u| SongPlan {
        amplitudes: flat_amplitudes(4),
        pac_links: Vec::new(),
        noise_floor,
        rating: rating_from_level(u),
    }
}

// ── Session assembly ─────────────────────────────────────────────────────────

/// Layout of a generated session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionOptions {
    pub song_duration_s: f64,
    pub fs: f64,
    /// Insert an advertisement after every `n` songs.
    pub ads_every: Option<usize>,
    pub ad_duration_s: f64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { song_duration_s: 180.0, fs: 220.0, ads_every: None, ad_duration_s: 20.0 }
    }
}

/// Generate a complete rated session: `n_songs` songs with signals and
/// ratings driven by `rule`, optionally interleaved with advertisements.
pub fn gen_synthetic_session(
    n_songs: usize,
    rule: impl Fn(f64) -> SongPlan,
    options: &SessionOptions,
    seed: u64,
) -> Result<Session, SynthError> {
    let catalog = BandCatalog::default();
    let mut session = Session::empty();
    session.sampling_rate = options.fs;
    // session time is kept as a sample count so frame stamps are exactly
    // `k / fs` — the same expression a replayed stream produces
    let mut cursor_samples = 0usize;
    let mut level_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xA11));

    for i in 0..n_songs {
        let u: f64 = level_rng.random();
        let plan = rule(u);
        if !(1..=5).contains(&plan.rating) {
            return Err(SynthError::BadRating(plan.rating));
        }
        let song_id = format!("song-{:03}", i + 1);
        let spec = SynthSpec {
            plan: plan.clone(),
            duration_s: options.song_duration_s,
            fs: options.fs,
            seed: derive_seed(seed, 0xB000 + i as u64),
        };
        append_block(
            &mut session,
            &spec,
            &catalog,
            &song_id,
            SegmentKind::Song,
            &mut cursor_samples,
        )?;
        session.ratings.insert(song_id, plan.rating);

        if let Some(every) = options.ads_every {
            if every > 0 && (i + 1) % every == 0 && i + 1 < n_songs {
                let ad_spec = SynthSpec {
                    plan: SongPlan {
                        amplitudes: flat_amplitudes(4),
                        pac_links: Vec::new(),
                        noise_floor: 0.5,
                        rating: 3, // unused for ads
                    },
                    duration_s: options.ad_duration_s,
                    fs: options.fs,
                    seed: derive_seed(seed, 0xC000 + i as u64),
                };
                let ad_id = format!("ad-{:03}", i + 1);
                append_block(
                    &mut session,
                    &ad_spec,
                    &catalog,
                    &ad_id,
                    SegmentKind::Advertisement,
                    &mut cursor_samples,
                )?;
            }
        }
    }
    Ok(session)
}

fn append_block(
    session: &mut Session,
    spec: &SynthSpec,
    catalog: &BandCatalog,
    id: &str,
    kind: SegmentKind,
    cursor_samples: &mut usize,
) -> Result<(), SynthError> {
    let channels = gen_channels(spec, catalog)?;
    let n = channels[0].len();
    let first = *cursor_samples;
    for k in 0..n {
        let t = (first + k) as f64 / spec.fs;
        // f32 quantization keeps the session file and its OSC replay equal
        let values: Vec<f64> = channels.iter().map(|c| c[k] as f32 as f64).collect();
        session.frames.push(SampleFrame { timestamp: t, values });
    }
    let start = first as f64 / spec.fs;
    let end = (first + n) as f64 / spec.fs;
    session.segments.push(Segment { song_id: id.to_string(), kind, start, end });
    *cursor_samples = first + n;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::envelope_phase;

    fn power_fraction_in_band(x: &[f64], fs: f64, low: f64, high: f64) -> f64 {
        let n = x.len();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.process(&mut buf);
        let mut total = 0.0;
        let mut in_band = 0.0;
        for (k, c) in buf.iter().enumerate().take(n / 2).skip(1) {
            let f = k as f64 * fs / n as f64;
            let p = c.norm_sqr();
            total += p;
            if (low..=high).contains(&f) {
                in_band += p;
            }
        }
        in_band / total
    }

    #[test]
    fn band_noise_is_spectrally_contained() {
        let catalog = BandCatalog::default();
        let alpha = catalog.get(Band::Alpha);
        let x = gen_band_noise(alpha, 1.0, 60.0, 220.0, 42).unwrap();
        assert_eq!(x.len(), 13200);
        let frac = power_fraction_in_band(&x, 220.0, 8.0, 13.0);
        assert!(frac >= 0.999, "in-band fraction {frac}");
    }

    #[test]
    fn band_noise_rms_matches_request() {
        let catalog = BandCatalog::default();
        for amp in [0.5, 1.0, 3.7] {
            let x = gen_band_noise(catalog.get(Band::Theta), amp, 30.0, 220.0, 9).unwrap();
            let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
            assert!((rms - amp).abs() / amp < 1e-12, "rms {rms} vs {amp}");
        }
    }

    #[test]
    fn zero_amplitude_gives_zero_series() {
        let catalog = BandCatalog::default();
        let x = gen_band_noise(catalog.get(Band::Alpha), 0.0, 10.0, 220.0, 1).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let catalog = BandCatalog::default();
        let a = gen_band_noise(catalog.get(Band::BetaLow), 1.0, 20.0, 220.0, 7).unwrap();
        let b = gen_band_noise(catalog.get(Band::BetaLow), 1.0, 20.0, 220.0, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_band_noise(catalog.get(Band::BetaLow), 1.0, 20.0, 220.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pac_signal_has_expected_length_and_validations() {
        let catalog = BandCatalog::default();
        let theta = catalog.get(Band::Theta);
        let gamma = catalog.get(Band::GammaLow);
        let x = gen_pac_signal(theta, gamma, 1.0, 60.0, 220.0, 5).unwrap();
        assert_eq!(x.len(), 13200);
        assert!(matches!(
            gen_pac_signal(gamma, theta, 0.5, 10.0, 220.0, 5),
            Err(SynthError::InvalidBands(_, _))
        ));
        assert!(matches!(
            gen_pac_signal(theta, gamma, 1.5, 10.0, 220.0, 5),
            Err(SynthError::BadCoupling(_))
        ));
    }

    #[test]
    fn coupled_envelope_follows_low_phase() {
        // direct check on the generator's construction: band-pass the high
        // band back out and correlate its envelope with cos(φ_low)
        let catalog = BandCatalog::default();
        let theta = catalog.get(Band::Theta);
        let gamma = catalog.get(Band::GammaHigh);
        let fs = 220.0;
        let x = gen_pac_signal(theta, gamma, 1.0, 60.0, fs, 11).unwrap();
        let low = crate::dsp::bandpass(&x, theta, fs).unwrap();
        let high = crate::dsp::bandpass(&x, gamma, fs).unwrap();
        let lo_env = envelope_phase(&analytic_signal(&low).unwrap(), 0.5, fs);
        let hi_env = envelope_phase(&analytic_signal(&high).unwrap(), 0.5, fs);
        let mut phases = Vec::new();
        let mut amps = Vec::new();
        for k in 0..x.len() {
            if lo_env.valid[k] && hi_env.valid[k] {
                phases.push(lo_env.phase[k]);
                amps.push(hi_env.amplitude[k]);
            }
        }
        let mvl = crate::descriptors::pac_mvl(&phases, &amps).unwrap();
        assert!(mvl > 0.2, "recovered MVL {mvl}");
    }

    #[test]
    fn session_layout_and_ratings() {
        let opts = SessionOptions { song_duration_s: 40.0, ads_every: Some(2), ..Default::default() };
        let session = gen_synthetic_session(4, alpha_linked_rule(2.0, 0.3), &opts, 77).unwrap();
        session.validate().unwrap();
        let songs: Vec<_> = session.songs().collect();
        assert_eq!(songs.len(), 4);
        assert_eq!(session.segments.len(), 5); // one ad after song 2
        assert_eq!(session.ratings.len(), 4);
        assert!(session.ratings.values().all(|r| (1..=5).contains(r)));
        // frames cover every segment contiguously at fs
        let expected = (4.0 * 40.0 + 20.0) * 220.0;
        assert_eq!(session.frames.len(), expected as usize);
    }

    #[test]
    fn empty_session_for_zero_songs() {
        let session =
            gen_synthetic_session(0, independent_rule(0.3), &SessionOptions::default(), 1).unwrap();
        assert!(session.frames.is_empty());
        assert!(session.segments.is_empty());
        assert!(session.ratings.is_empty());
    }

    #[test]
    fn rating_from_level_covers_all_scores() {
        assert_eq!(rating_from_level(0.0), 1);
        assert_eq!(rating_from_level(0.19), 1);
        assert_eq!(rating_from_level(0.21), 2);
        assert_eq!(rating_from_level(0.99), 5);
        assert_eq!(rating_from_level(1.0), 5);
    }

    #[test]
    fn pac_link_requires_low_band_presence() {
        let mut plan = independent_rule(0.0)(0.5);
        plan.pac_links.push(PacLink {
            channel: 0,
            low: Band::Theta,
            high: Band::GammaLow,
            coupling: 0.8,
        });
        plan.amplitudes[0][Band::Theta.index()] = 0.0;
        let spec = SynthSpec { plan, duration_s: 10.0, fs: 220.0, seed: 3 };
        assert!(matches!(
            gen_channels(&spec, &BandCatalog::default()),
            Err(SynthError::MissingLowBand(0, _))
        ));
    }
}
