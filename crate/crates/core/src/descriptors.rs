//! Window descriptors: band energies, hemispheric asymmetry, and
//! phase-amplitude coupling.
//!
//! Three descriptor families are computed per analysis window:
//!
//! * **abs/rel energy** — mean band envelope per channel, absolute (µV) and
//!   relative to the summed strength of all catalog bands.
//! * **asym / asym_norm** — left-minus-right envelope difference over the
//!   temporal and frontal electrode pairs, raw and normalized by L+R.
//! * **pac** — mean-vector-length coupling between the phase of a lower
//!   band and the envelope of a higher band, per channel, for every
//!   non-overlapping ordered band pair.
//!
//! For the default catalog and 4-channel montage the enumeration yields
//! 2·7·4 + 2·7·2 + 21·4 = 168 descriptors per window.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bands::{Band, BandCatalog, ALL_BANDS};
use crate::dsp::AnalysisWindow;
use crate::session::{ChannelLayout, PairSite};

/// Minimum fraction of valid samples a window must carry per series.
pub const MIN_VALID_FRACTION: f64 = 0.9;
/// Minimum low-band cycles required for a PAC estimate.
pub const MIN_PAC_CYCLES: f64 = 10.0;
/// Maximum fraction of missing entries tolerated in one descriptor vector.
pub const MAX_MISSING_FRACTION: f64 = 0.05;
/// Envelope sums below this are treated as a dead channel.
pub const DEGENERATE_TOTAL_UV: f64 = 1e-12;

/// The five descriptor families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DescriptorKind {
    AbsEnergy,
    RelEnergy,
    Asym,
    AsymNorm,
    Pac,
}

impl DescriptorKind {
    pub fn name(self) -> &'static str {
        match self {
            DescriptorKind::AbsEnergy => "abs_energy",
            DescriptorKind::RelEnergy => "rel_energy",
            DescriptorKind::Asym => "asym",
            DescriptorKind::AsymNorm => "asym_norm",
            DescriptorKind::Pac => "pac",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "abs_energy" => Some(DescriptorKind::AbsEnergy),
            "rel_energy" => Some(DescriptorKind::RelEnergy),
            "asym" => Some(DescriptorKind::Asym),
            "asym_norm" => Some(DescriptorKind::AsymNorm),
            "pac" => Some(DescriptorKind::Pac),
            _ => None,
        }
    }
}

/// Where a descriptor is measured: one channel or one left/right pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    Channel(String),
    Pair(PairSite),
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Channel(name) => f.write_str(name),
            Site::Pair(p) => f.write_str(p.name()),
        }
    }
}

/// Identity of one descriptor: family, band (pair for PAC), and site.
///
/// The canonical text form is `kind:band[:band2]@site`, e.g.
/// `rel_energy:alpha@TP9` or `pac:gamma_low:gamma_high@FP1`. Ordering is
/// lexicographic on that form, which makes ranking tie-breaks deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DescriptorId {
    pub kind: DescriptorKind,
    pub band: Band,
    /// High band of a PAC pair; `None` for the other families.
    pub band2: Option<Band>,
    pub site: Site,
}

impl DescriptorId {
    pub fn canonical(&self) -> String {
        match self.band2 {
            Some(b2) => format!("{}:{}:{}@{}", self.kind.name(), self.band, b2, self.site),
            None => format!("{}:{}@{}", self.kind.name(), self.band, self.site),
        }
    }

    /// Parse the canonical form back into an id.
    pub fn parse(text: &str) -> Option<Self> {
        let (head, site_str) = text.rsplit_once('@')?;
        let mut parts = head.split(':');
        let kind = DescriptorKind::from_name(parts.next()?)?;
        let band = Band::from_name(parts.next()?)?;
        let band2 = match parts.next() {
            Some(b) => Some(Band::from_name(b)?),
            None => None,
        };
        if parts.next().is_some() {
            return None;
        }
        let site = match PairSite::from_name(site_str) {
            Some(p) => Site::Pair(p),
            None => Site::Channel(site_str.to_string()),
        };
        let id = DescriptorId { kind, band, band2, site };
        id.well_formed().then_some(id)
    }

    fn well_formed(&self) -> bool {
        match self.kind {
            DescriptorKind::Pac => self.band2.is_some() && matches!(self.site, Site::Channel(_)),
            DescriptorKind::Asym | DescriptorKind::AsymNorm => {
                self.band2.is_none() && matches!(self.site, Site::Pair(_))
            }
            _ => self.band2.is_none() && matches!(self.site, Site::Channel(_)),
        }
    }
}

impl fmt::Display for DescriptorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl Ord for DescriptorId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical().cmp(&other.canonical())
    }
}

impl PartialOrd for DescriptorId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Enumerate the full descriptor catalog in a fixed order: abs and rel
/// energies, asymmetries, then PAC couplings.
pub fn enumerate_catalog(layout: &ChannelLayout, catalog: &BandCatalog) -> Vec<DescriptorId> {
    let mut ids = Vec::new();
    for kind in [DescriptorKind::AbsEnergy, DescriptorKind::RelEnergy] {
        for def in catalog.defs() {
            for name in layout.names() {
                ids.push(DescriptorId {
                    kind,
                    band: def.band,
                    band2: None,
                    site: Site::Channel(name.clone()),
                });
            }
        }
    }
    for kind in [DescriptorKind::Asym, DescriptorKind::AsymNorm] {
        for def in catalog.defs() {
            for site in layout.pair_sites() {
                ids.push(DescriptorId { kind, band: def.band, band2: None, site: Site::Pair(site) });
            }
        }
    }
    for (low, high) in catalog.coupling_pairs() {
        for name in layout.names() {
            ids.push(DescriptorId {
                kind: DescriptorKind::Pac,
                band: low,
                band2: Some(high),
                site: Site::Channel(name.clone()),
            });
        }
    }
    ids
}

/// Per-descriptor failure reasons.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DescriptorError {
    #[error("only {0:.1}% of window samples are valid")]
    InsufficientValidSamples(f64),
    #[error("summed band strength below {DEGENERATE_TOTAL_UV} µV")]
    DegenerateTotal,
    #[error("window holds {0:.1} low-band cycles, need {MIN_PAC_CYCLES}")]
    TooFewCycles(f64),
    #[error("phase and amplitude series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("channel {0:?} not in layout")]
    UnknownChannel(String),
    #[error("pair {0:?} not in layout")]
    UnknownPair(String),
    #[error("{missing} of {total} descriptors missing (> {:.0}%)", MAX_MISSING_FRACTION * 100.0)]
    TooManyMissing { missing: usize, total: usize },
}

// ── Individual descriptors ───────────────────────────────────────────────────

/// Mean band envelope over the window's valid samples, in µV.
pub fn band_amplitude(
    window: &AnalysisWindow<'_>,
    channel: usize,
    band: Band,
) -> Result<f64, DescriptorError> {
    let s = window.slice(channel, band);
    let n = s.amplitude.len();
    if n == 0 {
        return Err(DescriptorError::EmptyInput);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, &ok) in s.amplitude.iter().zip(s.valid) {
        if ok {
            sum += a;
            count += 1;
        }
    }
    let fraction = count as f64 / n as f64;
    if fraction < MIN_VALID_FRACTION {
        return Err(DescriptorError::InsufficientValidSamples(fraction * 100.0));
    }
    Ok(sum / count as f64)
}

/// One band's share of the summed strength of all catalog bands, in [0, 1].
pub fn relative_energy(
    window: &AnalysisWindow<'_>,
    channel: usize,
    band: Band,
) -> Result<f64, DescriptorError> {
    let mut total = 0.0;
    let mut this = 0.0;
    for b in ALL_BANDS {
        let amp = band_amplitude(window, channel, b)?;
        total += amp;
        if b == band {
            this = amp;
        }
    }
    if total < DEGENERATE_TOTAL_UV {
        return Err(DescriptorError::DegenerateTotal);
    }
    Ok(this / total)
}

/// Left-minus-right envelope asymmetry over a pair: raw mean difference and
/// the normalized mean of (L−R)/(L+R) with near-zero denominators excluded.
pub fn asymmetry_index(
    window: &AnalysisWindow<'_>,
    layout: &ChannelLayout,
    pair: PairSite,
    band: Band,
) -> Result<(f64, f64), DescriptorError> {
    let (left, right) = layout
        .pair(pair)
        .ok_or_else(|| DescriptorError::UnknownPair(pair.name().to_string()))?;
    let l = window.slice(left, band);
    let r = window.slice(right, band);
    let n = l.amplitude.len();
    if n == 0 {
        return Err(DescriptorError::EmptyInput);
    }
    let mut diff_sum = 0.0;
    let mut both = 0usize;
    let mut norm_sum = 0.0;
    let mut norm_count = 0usize;
    for k in 0..n {
        if l.valid[k] && r.valid[k] {
            both += 1;
            let (lv, rv) = (l.amplitude[k], r.amplitude[k]);
            diff_sum += lv - rv;
            let denom = lv + rv;
            if denom >= DEGENERATE_TOTAL_UV {
                norm_sum += (lv - rv) / denom;
                norm_count += 1;
            }
        }
    }
    let fraction = both as f64 / n as f64;
    if fraction < MIN_VALID_FRACTION {
        return Err(DescriptorError::InsufficientValidSamples(fraction * 100.0));
    }
    if norm_count == 0 {
        return Err(DescriptorError::DegenerateTotal);
    }
    Ok((diff_sum / both as f64, norm_sum / norm_count as f64))
}

/// Normalized mean vector length: `|Σ a·e^{iφ}| / Σ a` in [0, 1].
///
/// 0 means the amplitude carries no phase preference; 1 means all amplitude
/// is concentrated at a single phase.
pub fn pac_mvl(phase: &[f64], amp: &[f64]) -> Result<f64, DescriptorError> {
    if phase.len() != amp.len() {
        return Err(DescriptorError::LengthMismatch(phase.len(), amp.len()));
    }
    if phase.is_empty() {
        return Err(DescriptorError::EmptyInput);
    }
    let mut re = 0.0;
    let mut im = 0.0;
    let mut norm = 0.0;
    for (&p, &a) in phase.iter().zip(amp) {
        re += a * p.cos();
        im += a * p.sin();
        norm += a;
    }
    if norm < DEGENERATE_TOTAL_UV {
        return Err(DescriptorError::DegenerateTotal);
    }
    Ok((re * re + im * im).sqrt() / norm)
}

/// PAC between `low`'s phase and `high`'s envelope on one channel of a
/// window, using only samples both series mark valid.
pub fn pac_for_window(
    window: &AnalysisWindow<'_>,
    channel: usize,
    low: Band,
    high: Band,
    catalog: &BandCatalog,
) -> Result<f64, DescriptorError> {
    let low_def = catalog.get(low);
    let cycles = window.length_s() * low_def.low_hz;
    if cycles < MIN_PAC_CYCLES {
        return Err(DescriptorError::TooFewCycles(cycles));
    }
    let lo = window.slice(channel, low);
    let hi = window.slice(channel, high);
    let n = lo.phase.len();
    let mut phase = Vec::with_capacity(n);
    let mut amp = Vec::with_capacity(n);
    for k in 0..n {
        if lo.valid[k] && hi.valid[k] {
            phase.push(lo.phase[k]);
            amp.push(hi.amplitude[k]);
        }
    }
    if (phase.len() as f64) < MIN_VALID_FRACTION * n as f64 {
        return Err(DescriptorError::InsufficientValidSamples(
            100.0 * phase.len() as f64 / n as f64,
        ));
    }
    pac_mvl(&phase, &amp)
}

// ── The full vector ──────────────────────────────────────────────────────────

/// All descriptors of one window, with per-entry failure reasons for the
/// (rare) entries that could not be computed.
#[derive(Debug, Clone)]
pub struct DescriptorVector {
    pub song_id: String,
    /// Window start in session time, seconds.
    pub start: f64,
    pub length_s: f64,
    pub values: BTreeMap<DescriptorId, f64>,
    pub missing: BTreeMap<DescriptorId, DescriptorError>,
}

impl DescriptorVector {
    pub fn get(&self, id: &DescriptorId) -> Option<f64> {
        self.values.get(id).copied()
    }
}

/// Compute the full descriptor catalog for one window.
///
/// Individual failures become missing-value markers; the vector itself is
/// an error only when more than 5% of entries are missing.
pub fn descriptor_vector(
    window: &AnalysisWindow<'_>,
    layout: &ChannelLayout,
    catalog: &BandCatalog,
) -> Result<DescriptorVector, DescriptorError> {
    let ids = enumerate_catalog(layout, catalog);
    let total = ids.len();
    let mut values = BTreeMap::new();
    let mut missing = BTreeMap::new();

    // band amplitudes once per (channel, band); everything else reuses them
    let nch = layout.channel_count();
    let mut amps: Vec<Vec<Result<f64, DescriptorError>>> = Vec::with_capacity(nch);
    for ch in 0..nch {
        amps.push(ALL_BANDS.iter().map(|&b| band_amplitude(window, ch, b)).collect());
    }

    for id in ids {
        let result: Result<f64, DescriptorError> = match id.kind {
            DescriptorKind::AbsEnergy | DescriptorKind::RelEnergy => {
                let Site::Channel(name) = &id.site else {
                    unreachable!("energy ids use channel sites")
                };
                match layout.index_of(name) {
                    None => Err(DescriptorError::UnknownChannel(name.clone())),
                    Some(ch) if id.kind == DescriptorKind::AbsEnergy => {
                        amps[ch][id.band.index()].clone()
                    }
                    Some(ch) => {
                        let mut total_amp = 0.0;
                        let mut failed = None;
                        for b in ALL_BANDS {
                            match &amps[ch][b.index()] {
                                Ok(v) => total_amp += v,
                                Err(e) => failed = Some(e.clone()),
                            }
                        }
                        match failed {
                            Some(e) => Err(e),
                            None if total_amp < DEGENERATE_TOTAL_UV => {
                                Err(DescriptorError::DegenerateTotal)
                            }
                            None => amps[ch][id.band.index()].clone().map(|v| v / total_amp),
                        }
                    }
                }
            }
            DescriptorKind::Asym | DescriptorKind::AsymNorm => {
                let Site::Pair(pair) = id.site else { unreachable!("asym ids use pair sites") };
                asymmetry_index(window, layout, pair, id.band).map(|(ai, ai_norm)| {
                    if id.kind == DescriptorKind::Asym {
                        ai
                    } else {
                        ai_norm
                    }
                })
            }
            DescriptorKind::Pac => {
                let Site::Channel(name) = &id.site else {
                    unreachable!("pac ids use channel sites")
                };
                match layout.index_of(name) {
                    None => Err(DescriptorError::UnknownChannel(name.clone())),
                    Some(ch) => pac_for_window(
                        window,
                        ch,
                        id.band,
                        id.band2.expect("pac ids carry a band pair"),
                        catalog,
                    ),
                }
            }
        };
        match result {
            Ok(v) if v.is_finite() => {
                values.insert(id, v);
            }
            Ok(_) => {
                missing.insert(id, DescriptorError::EmptyInput);
            }
            Err(e) => {
                missing.insert(id, e);
            }
        }
    }

    if missing.len() as f64 > MAX_MISSING_FRACTION * total as f64 {
        return Err(DescriptorError::TooManyMissing { missing: missing.len(), total });
    }
    Ok(DescriptorVector {
        song_id: window.song_id().to_string(),
        start: window.start,
        length_s: window.length_s(),
        values,
        missing,
    })
}

// ── Surrogates ───────────────────────────────────────────────────────────────

/// How to destroy phase-amplitude alignment when building a null
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateMethod {
    /// Rotate the amplitude series by a random offset (≥ 10% of the window),
    /// preserving its autocorrelation. The calibrated choice for
    /// significance testing.
    CircularShift,
    /// Randomly permute the amplitude samples. Destroys autocorrelation,
    /// giving a much tighter null.
    Permutation,
}

/// MVL values of `n` surrogates with the phase-amplitude relation destroyed.
pub fn mvl_surrogates(
    phase: &[f64],
    amp: &[f64],
    n: usize,
    method: SurrogateMethod,
    seed: u64,
) -> Result<Vec<f64>, DescriptorError> {
    if phase.len() != amp.len() {
        return Err(DescriptorError::LengthMismatch(phase.len(), amp.len()));
    }
    if phase.is_empty() {
        return Err(DescriptorError::EmptyInput);
    }
    let len = amp.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut scratch = amp.to_vec();
    for _ in 0..n {
        match method {
            SurrogateMethod::CircularShift => {
                let margin = (len / 10).max(1);
                let span = len.saturating_sub(2 * margin).max(1);
                let shift = margin + rng.random_range(0..span);
                for (k, slot) in scratch.iter_mut().enumerate() {
                    *slot = amp[(k + shift) % len];
                }
            }
            SurrogateMethod::Permutation => {
                scratch.copy_from_slice(amp);
                // Fisher–Yates
                for k in (1..len).rev() {
                    let j = rng.random_range(0..=k);
                    scratch.swap(k, j);
                }
            }
        }
        out.push(pac_mvl(phase, &scratch)?);
    }
    Ok(out)
}
