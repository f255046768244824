//! `neuroscore` — EEG music-appraisal pipeline front end.
//!
//! The end-to-end flow:
//!
//! ```text
//! neuroscore synth    --out corpus --participants 5 --songs 30 --replay
//! neuroscore extract  corpus/*.session --out features
//! neuroscore select   features/*.features --out marker.biomarker
//! neuroscore train    features/p01.features --biomarker marker.biomarker --out p01.elm
//! neuroscore evaluate features/*.features --biomarker marker.biomarker --out eval.txt
//! neuroscore score-stream --model p01.elm --biomarker marker.biomarker \
//!     --replay corpus/p01.osc --sink scores.csv
//! neuroscore sweep    corpus/*.session --biomarker marker.biomarker \
//!     --lengths 30,50,70,90,100 --out curve.txt
//! ```

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use neuroscore_cli::commands::{
    cmd_evaluate, cmd_extract, cmd_select, cmd_sweep, cmd_synth, cmd_train, RuleName, SynthArgs,
};
use neuroscore_cli::config::PipelineConfig;
use neuroscore_cli::score::{score_replay, score_udp};
use neuroscore_cli::sink::RatingSink;
use neuroscore_core::elm::ElmModel;
use neuroscore_core::stats::BiomarkerSpec;

#[derive(Parser)]
#[command(name = "neuroscore", version, about = "Decode music appraisal scores from wearable EEG streams")]
struct Cli {
    /// Key=value config file applied before other flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed override; every stage derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic rated sessions (and optional OSC captures).
    Synth {
        #[arg(long, default_value = "corpus")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        participants: usize,
        #[arg(long, default_value_t = 20)]
        songs: usize,
        /// Score linkage: alpha | alpha-nl | pac | independent.
        #[arg(long, default_value = "alpha")]
        rule: String,
        #[arg(long, default_value_t = 150.0)]
        song_seconds: f64,
        /// Insert an advertisement after every N songs.
        #[arg(long)]
        ads_every: Option<usize>,
        #[arg(long, default_value_t = 2.0)]
        alpha_gain: f64,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        /// Also write a length-prefixed OSC capture per session.
        #[arg(long)]
        replay: bool,
    },
    /// Extract descriptor matrices from session files.
    Extract {
        sessions: Vec<PathBuf>,
        #[arg(long, default_value = "features")]
        out: PathBuf,
        /// Also dump the designed filter coefficients to this file.
        #[arg(long)]
        dump_filters: Option<PathBuf>,
    },
    /// Rank descriptors and synthesize the composite biomarker.
    Select {
        matrices: Vec<PathBuf>,
        #[arg(long, default_value = "marker.biomarker")]
        out: PathBuf,
        /// Override select.mode: greedy | exhaustive | fixed.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Train one listener's score decoder.
    Train {
        matrix: PathBuf,
        #[arg(long)]
        biomarker: PathBuf,
        #[arg(long, default_value = "model.elm")]
        out: PathBuf,
    },
    /// Repeated 60/40 split-by-song cross-validation.
    Evaluate {
        matrices: Vec<PathBuf>,
        #[arg(long)]
        biomarker: PathBuf,
        #[arg(long, default_value = "eval.txt")]
        out: PathBuf,
    },
    /// Score a replayed capture or a live UDP stream.
    ScoreStream {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        biomarker: PathBuf,
        /// Replay a length-prefixed OSC capture file.
        #[arg(long, conflicts_with = "listen")]
        replay: Option<PathBuf>,
        /// Listen on this UDP port instead of replaying.
        #[arg(long)]
        listen: Option<u16>,
        /// Stop a live session after this many seconds (0 = run forever).
        #[arg(long, default_value_t = 0.0)]
        duration: f64,
        #[arg(long, default_value = "scores.csv")]
        sink: PathBuf,
        /// Mirror records as JSON POSTs to this URL.
        #[arg(long)]
        sink_url: Option<String>,
    },
    /// R-vs-window-length curve for a biomarker.
    Sweep {
        sessions: Vec<PathBuf>,
        #[arg(long)]
        biomarker: PathBuf,
        /// Comma-separated window lengths in seconds.
        #[arg(long, default_value = "30,50,70,90,100")]
        lengths: String,
        #[arg(long, default_value = "curve.txt")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    match cli.command {
        Command::Synth {
            out,
            participants,
            songs,
            rule,
            song_seconds,
            ads_every,
            alpha_gain,
            noise,
            replay,
        } => {
            let args = SynthArgs {
                out_dir: out,
                participants,
                songs,
                rule: RuleName::parse(&rule)?,
                song_seconds,
                ads_every,
                alpha_gain,
                noise,
                with_replay: replay,
            };
            let paths = cmd_synth(&args, &config)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Extract { sessions, out, dump_filters } => {
            if sessions.is_empty() {
                bail!("no session files given");
            }
            if let Some(path) = dump_filters {
                let params = config.extract_params();
                let report = neuroscore_core::dsp::filter_coefficient_report(
                    &params.catalog,
                    config.notch_hz,
                    neuroscore_core::session::DEFAULT_SAMPLING_RATE,
                );
                std::fs::write(&path, report)?;
                println!("filter coefficients → {}", path.display());
            }
            cmd_extract(&sessions, &config, &out)?;
        }
        Command::Select { matrices, out, mode } => {
            if matrices.is_empty() {
                bail!("no feature matrices given");
            }
            if let Some(mode) = mode {
                config.apply_text(&format!("select.mode = {mode}"))?;
            }
            cmd_select(&matrices, &config, &out)?;
        }
        Command::Train { matrix, biomarker, out } => {
            cmd_train(&matrix, &biomarker, &config, &out)?;
        }
        Command::Evaluate { matrices, biomarker, out } => {
            if matrices.is_empty() {
                bail!("no feature matrices given");
            }
            cmd_evaluate(&matrices, &biomarker, &config, &out)?;
        }
        Command::ScoreStream { model, biomarker, replay, listen, duration, sink, sink_url } => {
            let model = ElmModel::read_from(&model)?;
            let spec = BiomarkerSpec::read_from(&biomarker)?;
            let url = sink_url.or_else(|| config.sink_url.clone());
            let mut sink = RatingSink::create(&sink, url)?;
            let report = match (replay, listen) {
                (Some(path), None) => score_replay(&path, &model, &spec, &config, &mut sink)?,
                (None, Some(port)) => {
                    score_udp(port, model, spec, config.clone(), &mut sink, duration)?
                }
                (None, None) => score_udp(
                    config.osc_port,
                    model,
                    spec,
                    config.clone(),
                    &mut sink,
                    duration,
                )?,
                _ => unreachable!("clap enforces the conflict"),
            };
            println!(
                "scored {} windows over {} songs ({} frames, {} parse errors)",
                report.windows_scored, report.songs_scored, report.frames, report.parse_errors
            );
        }
        Command::Sweep { sessions, biomarker, lengths, out } => {
            if sessions.is_empty() {
                bail!("no session files given");
            }
            let lengths: Vec<f64> = lengths
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()?;
            cmd_sweep(&sessions, &biomarker, &lengths, &config, &out)?;
        }
    }
    Ok(())
}
