//! Core pipeline for decoding music appraisal from wearable-EEG streams.
//!
//! The crate turns 4-channel EEG (220 Hz, OSC transport) into a per-song
//! score in [1, 5]:
//!
//! ```text
//! OSC datagrams ─ osc / stream ─▶ Session (frames + song segments + ratings)
//!        Session ─ dsp ─────────▶ per-band envelope/phase series, windows
//!        windows ─ descriptors ─▶ 168-entry descriptor vectors
//!        vectors ─ stats ───────▶ distance-correlation ranked biomarker
//!      biomarker ─ elm ─────────▶ per-listener score decoder
//! ```
//!
//! `synth` generates seeded sessions with known band content, coupling, and
//! score linkage, so every stage has a ground-truth oracle. `pipeline` ties
//! the stages together for extraction and streaming.

pub mod bands;
pub mod descriptors;
pub mod dsp;
pub mod elm;
pub mod osc;
pub mod pipeline;
pub mod session;
pub mod stats;
pub mod stream;
pub mod synth;

pub use bands::{Band, BandCatalog, BandDef, ALL_BANDS};
pub use session::{ChannelLayout, SampleFrame, Segment, SegmentKind, Session};
