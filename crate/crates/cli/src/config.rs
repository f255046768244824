//! Pipeline configuration: a flat `key = value` text file feeding every
//! subcommand, with CLI flags layered on top.
//!
//! ```text
//! # comments and blank lines are fine
//! window_s     = 90
//! overlap      = 0.5
//! head_drop_s  = 5
//! notch_hz     = 50          # 0 disables the notch
//! edge_taper_s = 0.5
//! band.alpha   = 8,13        # override one band's edges
//! select.mode  = greedy      # greedy | exhaustive | fixed
//! select.epsilon_gain = 0.001
//! select.max_features = 8
//! select.topk  = 10          # exhaustive search width
//! select.single_alpha = false
//! elm.candidates = 4,8,16,32,64
//! elm.hidden   = 0           # pin a width; 0 means sweep the candidates
//! elm.lambda   = 1e-6
//! elm.activation = logistic
//! eval.train_frac = 0.6
//! eval.repetitions = 10
//! osc.address  = /muse/eeg
//! osc.port     = 7070
//! sink.url     = http://127.0.0.1:8080/ratings
//! seed         = 7
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use neuroscore_core::bands::Band;
use neuroscore_core::dsp::WindowParams;
use neuroscore_core::elm::Activation;
use neuroscore_core::pipeline::ExtractParams;
use neuroscore_core::stats::{SelectionConfig, SelectionMode};
use neuroscore_core::stream::EegSchema;

/// How the biomarker is produced by `select`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectModeConfig {
    Greedy,
    Exhaustive,
    /// Emit the published default biomarker unchanged.
    Fixed,
}

/// Everything the subcommands need, with sensible defaults.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub window_s: f64,
    pub overlap: f64,
    pub head_drop_s: f64,
    pub notch_hz: f64,
    pub edge_taper_s: f64,
    pub band_overrides: Vec<(Band, f64, f64)>,
    pub select_mode: SelectModeConfig,
    pub select_epsilon_gain: f64,
    pub select_max_features: usize,
    pub select_topk: usize,
    pub select_single_alpha: bool,
    pub elm_candidates: Vec<usize>,
    /// Pinned hidden width; 0 sweeps the candidates.
    pub elm_hidden: usize,
    pub elm_lambda: f64,
    pub elm_activation: Activation,
    pub eval_train_frac: f64,
    pub eval_repetitions: usize,
    pub osc_address: String,
    pub osc_port: u16,
    pub sink_url: Option<String>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_s: 90.0,
            overlap: 0.5,
            head_drop_s: 5.0,
            notch_hz: 50.0,
            edge_taper_s: 0.5,
            band_overrides: Vec::new(),
            select_mode: SelectModeConfig::Greedy,
            select_epsilon_gain: 1e-3,
            select_max_features: 8,
            select_topk: 10,
            select_single_alpha: false,
            elm_candidates: vec![4, 8, 16, 32, 64],
            elm_hidden: 0,
            elm_lambda: 1e-6,
            elm_activation: Activation::Logistic,
            eval_train_frac: 0.6,
            eval_repetitions: 10,
            osc_address: "/muse/eeg".into(),
            osc_port: 7070,
            sink_url: None,
            seed: 7,
        }
    }
}

impl PipelineConfig {
    /// Load a config file over the defaults. Unknown keys are errors (they
    /// are usually typos).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading config {}", path.as_ref().display()))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key = value, got {raw:?}", lineno + 1);
            };
            self.set(key.trim(), value.trim())
                .with_context(|| format!("config line {}", lineno + 1))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "window_s" => self.window_s = value.parse()?,
            "overlap" => self.overlap = value.parse()?,
            "head_drop_s" => self.head_drop_s = value.parse()?,
            "notch_hz" => self.notch_hz = value.parse()?,
            "edge_taper_s" => self.edge_taper_s = value.parse()?,
            "select.mode" => {
                self.select_mode = match value {
                    "greedy" => SelectModeConfig::Greedy,
                    "exhaustive" | "exhaustive-topk" => SelectModeConfig::Exhaustive,
                    "fixed" => SelectModeConfig::Fixed,
                    other => bail!("unknown select.mode {other:?}"),
                }
            }
            "select.epsilon_gain" => self.select_epsilon_gain = value.parse()?,
            "select.max_features" => self.select_max_features = value.parse()?,
            "select.topk" => self.select_topk = value.parse()?,
            "select.single_alpha" => self.select_single_alpha = value.parse()?,
            "elm.candidates" => {
                self.elm_candidates = value
                    .split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<Result<_, _>>()?
            }
            "elm.hidden" => self.elm_hidden = value.parse()?,
            "elm.lambda" => self.elm_lambda = value.parse()?,
            "elm.activation" => {
                self.elm_activation = Activation::from_name(value)
                    .ok_or_else(|| anyhow::anyhow!("unknown activation {value:?}"))?
            }
            "eval.train_frac" => self.eval_train_frac = value.parse()?,
            "eval.repetitions" => self.eval_repetitions = value.parse()?,
            "osc.address" => self.osc_address = value.to_string(),
            "osc.port" => self.osc_port = value.parse()?,
            "sink.url" => self.sink_url = Some(value.to_string()),
            "seed" => self.seed = value.parse()?,
            _ if key.starts_with("band.") => {
                let band = Band::from_name(&key[5..])
                    .ok_or_else(|| anyhow::anyhow!("unknown band {key:?}"))?;
                let (lo, hi) = value
                    .split_once(',')
                    .ok_or_else(|| anyhow::anyhow!("band override wants low,high"))?;
                self.band_overrides
                    .push((band, lo.trim().parse()?, hi.trim().parse()?));
            }
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Extraction parameters derived from this config.
    pub fn extract_params(&self) -> ExtractParams {
        let mut params = ExtractParams {
            window: WindowParams {
                window_s: self.window_s,
                overlap: self.overlap,
                drop_head_s: self.head_drop_s,
            },
            notch_hz: (self.notch_hz > 0.0).then_some(self.notch_hz),
            edge_taper_s: self.edge_taper_s,
            ..ExtractParams::default()
        };
        for &(band, lo, hi) in &self.band_overrides {
            params.catalog.override_band(band, lo, hi);
        }
        params
    }

    /// Selection parameters derived from this config (`Fixed` mode is
    /// handled by the select command itself).
    pub fn selection_config(&self) -> SelectionConfig {
        SelectionConfig {
            mode: match self.select_mode {
                SelectModeConfig::Exhaustive => SelectionMode::ExhaustiveTopK(self.select_topk),
                _ => SelectionMode::Greedy,
            },
            epsilon_gain: self.select_epsilon_gain,
            max_features: self.select_max_features,
        }
    }

    /// OSC schema with the configured EEG address.
    pub fn schema(&self) -> EegSchema {
        EegSchema { eeg_address: self.osc_address.clone(), ..EegSchema::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_every_field() {
        let c = PipelineConfig::default();
        assert_eq!(c.window_s, 90.0);
        assert_eq!(c.eval_repetitions, 10);
        assert_eq!(c.eval_train_frac, 0.6);
        assert_eq!(c.osc_address, "/muse/eeg");
    }

    #[test]
    fn key_values_override_defaults() {
        let mut c = PipelineConfig::default();
        c.apply_text(
            "window_s = 45\n# comment\nselect.mode = exhaustive\nelm.candidates = 2, 4, 8\nband.alpha = 8.5,12.5\nsink.url = http://localhost:9/r\n",
        )
        .unwrap();
        assert_eq!(c.window_s, 45.0);
        assert_eq!(c.select_mode, SelectModeConfig::Exhaustive);
        assert_eq!(c.elm_candidates, vec![2, 4, 8]);
        assert_eq!(c.band_overrides, vec![(Band::Alpha, 8.5, 12.5)]);
        assert_eq!(c.sink_url.as_deref(), Some("http://localhost:9/r"));
        let params = c.extract_params();
        assert_eq!(params.catalog.get(Band::Alpha).low_hz, 8.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = PipelineConfig::default();
        assert!(c.apply_text("windows = 90\n").is_err());
        assert!(c.apply_text("select.mode = psychic\n").is_err());
    }
}
