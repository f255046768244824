//! The brain-rhythm frequency catalog.
//!
//! Seven bands partition 0.5–90 Hz: the classic δ/θ/α plus split β and γ
//! sub-bands for finer frequency resolution. The 49–51 Hz gap between the
//! γ sub-bands mirrors the mains notch so no band straddles 50 Hz.

use std::fmt;

/// Identifier for one catalog band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    BetaLow,
    BetaHigh,
    GammaLow,
    GammaHigh,
}

/// All catalog bands in ascending frequency order.
pub const ALL_BANDS: [Band; 7] = [
    Band::Delta,
    Band::Theta,
    Band::Alpha,
    Band::BetaLow,
    Band::BetaHigh,
    Band::GammaLow,
    Band::GammaHigh,
];

impl Band {
    /// Canonical lowercase name used in file formats and descriptor ids.
    pub fn name(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::BetaLow => "beta_low",
            Band::BetaHigh => "beta_high",
            Band::GammaLow => "gamma_low",
            Band::GammaHigh => "gamma_high",
        }
    }

    /// Parse a canonical band name.
    pub fn from_name(name: &str) -> Option<Band> {
        ALL_BANDS.iter().copied().find(|b| b.name() == name)
    }

    /// Index of this band in [`ALL_BANDS`].
    pub fn index(self) -> usize {
        ALL_BANDS.iter().position(|&b| b == self).unwrap()
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One band definition: a name plus its frequency edges in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandDef {
    pub band: Band,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandDef {
    pub fn new(band: Band, low_hz: f64, high_hz: f64) -> Self {
        assert!(
            low_hz > 0.0 && low_hz < high_hz,
            "band edges must satisfy 0 < low < high"
        );
        Self { band, low_hz, high_hz }
    }

    /// True when this band is representable at sampling rate `fs` (upper edge
    /// below Nyquist).
    pub fn valid_for(&self, fs: f64) -> bool {
        self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < fs / 2.0
    }

    /// Geometric band center in Hz.
    pub fn center_hz(&self) -> f64 {
        (self.low_hz * self.high_hz).sqrt()
    }
}

/// The full band catalog used throughout the pipeline.
///
/// Defaults to δ (0.5–4), θ (4–8), α (8–13), β_low (13–20), β_high (20–30),
/// γ_low (30–49), γ_high (51–90) Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct BandCatalog {
    defs: Vec<BandDef>,
}

impl Default for BandCatalog {
    fn default() -> Self {
        Self {
            defs: vec![
                BandDef::new(Band::Delta, 0.5, 4.0),
                BandDef::new(Band::Theta, 4.0, 8.0),
                BandDef::new(Band::Alpha, 8.0, 13.0),
                BandDef::new(Band::BetaLow, 13.0, 20.0),
                BandDef::new(Band::BetaHigh, 20.0, 30.0),
                BandDef::new(Band::GammaLow, 30.0, 49.0),
                BandDef::new(Band::GammaHigh, 51.0, 90.0),
            ],
        }
    }
}

impl BandCatalog {
    /// Bands in ascending frequency order.
    pub fn defs(&self) -> &[BandDef] {
        &self.defs
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    /// Look up the definition for `band`.
    pub fn get(&self, band: Band) -> &BandDef {
        self.defs.iter().find(|d| d.band == band).expect("band in catalog")
    }

    /// Replace the edges of one band, keeping order by low edge.
    pub fn override_band(&mut self, band: Band, low_hz: f64, high_hz: f64) {
        if let Some(def) = self.defs.iter_mut().find(|d| d.band == band) {
            *def = BandDef::new(band, low_hz, high_hz);
        }
        self.defs.sort_by(|a, b| a.low_hz.total_cmp(&b.low_hz));
    }

    /// Ordered (low, high) pairs with non-overlapping frequency support:
    /// every pair where the low band's upper edge does not exceed the high
    /// band's lower edge. For the default catalog this yields 21 pairs.
    pub fn coupling_pairs(&self) -> Vec<(Band, Band)> {
        let mut pairs = Vec::new();
        for (i, lo) in self.defs.iter().enumerate() {
            for hi in &self.defs[i + 1..] {
                if lo.high_hz <= hi.low_hz {
                    pairs.push((lo.band, hi.band));
                }
            }
        }
        pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_has_seven_bands() {
        let cat = BandCatalog::default();
        assert_eq!(cat.len(), 7);
        assert_eq!(cat.get(Band::Delta).low_hz, 0.5);
        assert_eq!(cat.get(Band::GammaHigh).high_hz, 90.0);
        // gamma gap mirrors the mains notch
        assert_eq!(cat.get(Band::GammaLow).high_hz, 49.0);
        assert_eq!(cat.get(Band::GammaHigh).low_hz, 51.0);
    }

    #[test]
    fn coupling_pairs_count_is_21() {
        let cat = BandCatalog::default();
        let pairs = cat.coupling_pairs();
        assert_eq!(pairs.len(), 21);
        // every adjacent pair qualifies in the default catalog
        assert!(pairs.contains(&(Band::GammaLow, Band::GammaHigh)));
        assert!(pairs.contains(&(Band::Delta, Band::Theta)));
        // no reversed or self pairs
        assert!(!pairs.contains(&(Band::Theta, Band::Delta)));
    }

    #[test]
    fn band_names_round_trip() {
        for b in ALL_BANDS {
            assert_eq!(Band::from_name(b.name()), Some(b));
        }
        assert_eq!(Band::from_name("zeta"), None);
    }

    #[test]
    fn validity_depends_on_nyquist() {
        let def = BandDef::new(Band::GammaHigh, 51.0, 90.0);
        assert!(def.valid_for(220.0));
        assert!(!def.valid_for(160.0));
    }
}
