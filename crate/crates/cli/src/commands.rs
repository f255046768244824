//! Offline subcommands: corpus synthesis, descriptor extraction, biomarker
//! selection, per-listener training, cross-validated evaluation, and the
//! window-length sweep.
//!
//! Every command is deterministic given its inputs and the root seed; all
//! stage seeds derive from the root via tagged splitmix so runs are
//! reproducible end to end. Derived seeds are logged to stderr.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use neuroscore_core::elm::{
    elm_predict, elm_train, nrmse, select_hidden_count, ElmModel, HiddenSelectConfig,
};
use neuroscore_core::pipeline::{extract_table, sweep_extractor};
use neuroscore_core::session::Session;
use neuroscore_core::stats::{
    default_biomarker, mean_subset_r, r_vs_window_length, rank_descriptors, select_biomarker,
    BiomarkerSpec, DescriptorTable, FeatureMatrix, RankedDescriptor,
};
use neuroscore_core::stream::{session_to_datagrams, write_replay};
use neuroscore_core::synth::{
    alpha_linked_rule, alpha_monotone_rule, derive_seed, gen_synthetic_session, independent_rule,
    pac_linked_rule, SessionOptions, SongPlan,
};

use crate::config::{PipelineConfig, SelectModeConfig};

fn log_seed(stage: &str, seed: u64) {
    eprintln!("seed.{stage} = {seed}");
}

/// Primary modules a subcommand exercises. Commands log these at start so
/// a pipeline run leaves an auditable stage trail.
pub fn command_stages(command: &str) -> &'static [&'static str] {
    match command {
        "synth" => &["synth", "ingest"],
        "extract" => &["ingest", "dsp", "descriptors"],
        "select" => &["stats"],
        "train" => &["elm"],
        "evaluate" => &["elm", "stats"],
        "score-stream" => &["ingest", "dsp", "descriptors", "elm"],
        "sweep" => &["ingest", "dsp", "descriptors", "stats"],
        _ => &[],
    }
}

pub(crate) fn log_stages(command: &str) {
    eprintln!("stage-log: {command} modules={}", command_stages(command).join(","));
}

// ── synth ────────────────────────────────────────────────────────────────────

/// Named score-linkage rules for the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleName {
    Alpha,
    AlphaNonlinear,
    Pac,
    Independent,
}

impl RuleName {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "alpha" => RuleName::Alpha,
            "alpha-nl" | "alpha-nonlinear" => RuleName::AlphaNonlinear,
            "pac" => RuleName::Pac,
            "independent" => RuleName::Independent,
            other => bail!("unknown rule {other:?} (alpha | alpha-nl | pac | independent)"),
        })
    }

    fn rule(self, alpha_gain: f64, noise: f64) -> Box<dyn Fn(f64) -> SongPlan> {
        match self {
            RuleName::Alpha => Box::new(alpha_linked_rule(alpha_gain, noise)),
            RuleName::AlphaNonlinear => Box::new(alpha_monotone_rule(alpha_gain, noise)),
            RuleName::Pac => Box::new(pac_linked_rule(noise)),
            RuleName::Independent => Box::new(independent_rule(noise)),
        }
    }
}

pub struct SynthArgs {
    pub out_dir: PathBuf,
    pub participants: usize,
    pub songs: usize,
    pub rule: RuleName,
    pub song_seconds: f64,
    pub ads_every: Option<usize>,
    pub alpha_gain: f64,
    pub noise: f64,
    pub with_replay: bool,
}

/// Generate one session file per synthetic participant (plus a matching
/// OSC capture when requested). Returns the session paths.
pub fn cmd_synth(args: &SynthArgs, config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    log_stages("synth");
    std::fs::create_dir_all(&args.out_dir)?;
    let options = SessionOptions {
        song_duration_s: args.song_seconds,
        ads_every: args.ads_every,
        ..SessionOptions::default()
    };
    let mut paths = Vec::new();
    for p in 0..args.participants {
        let seed = derive_seed(config.seed, 0x5E55 + p as u64);
        log_seed(&format!("synth.p{:02}", p + 1), seed);
        let rule = args.rule.rule(args.alpha_gain, args.noise);
        let session = gen_synthetic_session(args.songs, rule, &options, seed)?;
        let path = args.out_dir.join(format!("p{:02}.session", p + 1));
        session.write_to(&path)?;
        if args.with_replay {
            let datagrams = session_to_datagrams(&session, &config.schema());
            write_replay(args.out_dir.join(format!("p{:02}.osc", p + 1)), &datagrams)?;
        }
        paths.push(path);
    }
    Ok(paths)
}

// ── extract ──────────────────────────────────────────────────────────────────

/// Extract descriptor tables for a batch of session files. Per-file errors
/// are reported and the batch continues; the error is returned only when
/// every file fails.
pub fn cmd_extract(
    inputs: &[PathBuf],
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    log_stages("extract");
    std::fs::create_dir_all(out_dir)?;
    let params = config.extract_params();
    let mut outputs = Vec::new();
    let mut failures = Vec::new();
    for input in inputs {
        let run = || -> Result<PathBuf> {
            let session = Session::read_from(input)
                .with_context(|| format!("reading {}", input.display()))?;
            let extraction = extract_table(&session, &params)?;
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "session".into());
            let out = out_dir.join(format!("{stem}.features"));
            extraction.table.write_to(&out)?;
            println!(
                "{}: {} windows, {} descriptors, {} short songs, {} skipped windows",
                input.display(),
                extraction.table.rows.len(),
                extraction.table.ids.len(),
                extraction.short_songs.len(),
                extraction.skipped_windows.len()
            );
            for s in &extraction.short_songs {
                println!(
                    "  song {} too short: {:.1} s < {:.1} s needed",
                    s.song_id, s.duration, s.needed
                );
            }
            for w in &extraction.skipped_windows {
                println!("  window {}@{:.1}s skipped: {}", w.song_id, w.start, w.reason);
            }
            Ok(out)
        };
        match run() {
            Ok(path) => outputs.push(path),
            Err(e) => {
                eprintln!("error: {}: {e:#}", input.display());
                failures.push(input.clone());
            }
        }
    }
    if outputs.is_empty() && !failures.is_empty() {
        bail!("all {} input files failed", failures.len());
    }
    Ok(outputs)
}

// ── select ───────────────────────────────────────────────────────────────────

pub struct SelectOutput {
    pub spec: BiomarkerSpec,
    pub ranking: Vec<RankedDescriptor>,
}

/// Rank descriptors across participants and synthesize the biomarker.
/// Writes the biomarker file to `out` and a ranking report next to it.
pub fn cmd_select(
    matrix_paths: &[PathBuf],
    config: &PipelineConfig,
    out: &Path,
) -> Result<SelectOutput> {
    log_stages("select");
    let tables = read_tables(matrix_paths)?;
    let ranking = rank_descriptors(&tables)?;

    let spec = match config.select_mode {
        SelectModeConfig::Fixed => {
            let ids = default_biomarker(config.select_single_alpha);
            let (mean_r, per_r) = mean_subset_r(&tables, &ids)?;
            BiomarkerSpec {
                ids,
                selection_r: mean_r,
                per_participant_r: per_r,
                window_s: tables[0].window_s,
            }
        }
        _ => select_biomarker(&ranking, &tables, &config.selection_config())?,
    };
    spec.write_to(out)?;

    let report_path = out.with_extension("ranking.txt");
    write_ranking_report(&report_path, &ranking)?;
    println!(
        "biomarker: {} features, mean R = {:.4} → {}",
        spec.ids.len(),
        spec.selection_r,
        out.display()
    );
    for id in &spec.ids {
        println!("  {}", id.canonical());
    }
    Ok(SelectOutput { spec, ranking })
}

fn write_ranking_report(path: &Path, ranking: &[RankedDescriptor]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "#ranking v1")?;
    writeln!(w, "# rank  mean_R  per-participant_R...  descriptor")?;
    for (i, r) in ranking.iter().enumerate() {
        write!(w, "rank {} {:.6}", i + 1, r.mean_r)?;
        for v in &r.per_participant {
            write!(w, " {v:.6}")?;
        }
        writeln!(w, " {}", r.id.canonical())?;
    }
    Ok(())
}

fn read_tables(paths: &[PathBuf]) -> Result<Vec<DescriptorTable>> {
    if paths.is_empty() {
        bail!("need at least one feature matrix");
    }
    paths
        .iter()
        .map(|p| {
            DescriptorTable::read_from(p).with_context(|| format!("reading {}", p.display()))
        })
        .collect()
}

// ── train ────────────────────────────────────────────────────────────────────

/// Split a song list into train/test sets (by song, never by window).
fn split_songs(songs: &[String], train_frac: f64, seed: u64) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut order: Vec<&String> = songs.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in (1..order.len()).rev() {
        let j = rng.random_range(0..=k);
        order.swap(k, j);
    }
    let n_train = ((songs.len() as f64 * train_frac).round() as usize).clamp(1, songs.len() - 1);
    let train: BTreeSet<String> = order[..n_train].iter().map(|s| s.to_string()).collect();
    let test: BTreeSet<String> = order[n_train..].iter().map(|s| s.to_string()).collect();
    (train, test)
}

fn unique_songs(m: &FeatureMatrix) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for s in &m.song_ids {
        if seen.insert(s.clone()) {
            out.push(s.clone());
        }
    }
    out
}

fn rows_for(m: &FeatureMatrix, songs: &BTreeSet<String>) -> (Vec<Vec<f64>>, Vec<f64>, Vec<String>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    for (r, row) in m.rows.iter().enumerate() {
        if songs.contains(&m.song_ids[r]) {
            x.push(row.clone());
            y.push(m.ratings[r]);
            ids.push(m.song_ids[r].clone());
        }
    }
    (x, y, ids)
}

/// Pick the hidden width for a training matrix: the pinned config value,
/// or a sweep over the candidates using a 75/25 song-level sub-split.
fn choose_hidden(
    m: &FeatureMatrix,
    config: &PipelineConfig,
    seed: u64,
) -> Result<(usize, bool)> {
    if config.elm_hidden > 0 {
        return Ok((config.elm_hidden, true));
    }
    let songs = unique_songs(m);
    if songs.len() < 2 {
        // cannot sub-split; take the middle candidate
        return Ok((config.elm_candidates[config.elm_candidates.len() / 2], false));
    }
    let (train, val) = split_songs(&songs, 0.75, derive_seed(seed, 0x17D));
    let (xt, yt, _) = rows_for(m, &train);
    let (xv, yv, _) = rows_for(m, &val);
    let sel = select_hidden_count(
        &xt,
        &yt,
        &xv,
        &yv,
        &config.elm_candidates,
        derive_seed(seed, 0x3E1),
        config.elm_lambda,
        config.elm_activation,
        &HiddenSelectConfig::default(),
    )?;
    Ok((sel.hidden_count, sel.converged))
}

/// Train one listener's model: restrict the matrix to the biomarker, pick
/// the hidden width, fit on all rated windows, write the model file.
pub fn cmd_train(
    matrix_path: &Path,
    biomarker_path: &Path,
    config: &PipelineConfig,
    out: &Path,
) -> Result<ElmModel> {
    log_stages("train");
    let table = DescriptorTable::read_from(matrix_path)?;
    let spec = BiomarkerSpec::read_from(biomarker_path)?;
    let m = table.submatrix(&spec.ids)?;
    if m.rows.is_empty() {
        bail!("matrix {} has no complete rated rows", matrix_path.display());
    }
    let (hidden, converged) = choose_hidden(&m, config, config.seed)?;
    if !converged {
        eprintln!("warning: hidden-width sweep did not converge; using {hidden}");
    }
    let train_seed = derive_seed(config.seed, 0xE1A);
    log_seed("train.elm", train_seed);
    let model = elm_train(
        &m.rows,
        &m.ratings,
        hidden,
        train_seed,
        config.elm_lambda,
        config.elm_activation,
    )?;
    let pred: Vec<f64> = elm_predict(&model, &m.rows)?.iter().map(|p| p.raw).collect();
    let train_err = nrmse(&m.ratings, &pred)?;
    model.write_to(out)?;
    println!(
        "model: {} features, {hidden} hidden, training nrmse {train_err:.4} → {}",
        m.ids.len(),
        out.display()
    );
    Ok(model)
}

// ── evaluate ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct RepEval {
    pub seed: u64,
    pub hidden: usize,
    pub nrmse_window: f64,
    pub nrmse_song: f64,
}

#[derive(Debug, Clone)]
pub struct ParticipantEval {
    pub name: String,
    pub reps: Vec<RepEval>,
    pub mean_window: f64,
    pub std_window: f64,
    pub mean_song: f64,
    pub std_song: f64,
    /// Window-level NRMSE of always predicting the train-set mean rating.
    pub baseline_window: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub participants: Vec<ParticipantEval>,
    /// Mean ± std across participants, window level.
    pub overall_window: (f64, f64),
    /// Mean ± std across participants, per-song level.
    pub overall_song: (f64, f64),
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Repeated random 60/40 cross-validation, split by song so correlated
/// windows never leak across the partition. Reports window-level and
/// per-song NRMSE, each as mean ± std.
pub fn cmd_evaluate(
    matrix_paths: &[PathBuf],
    biomarker_path: &Path,
    config: &PipelineConfig,
    out: &Path,
) -> Result<EvalOutcome> {
    log_stages("evaluate");
    let spec = BiomarkerSpec::read_from(biomarker_path)?;
    let tables = read_tables(matrix_paths)?;

    let mut participants = Vec::new();
    for (p, table) in tables.iter().enumerate() {
        let name = matrix_paths[p]
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| format!("p{p}"));
        let m = table.submatrix(&spec.ids)?;
        if m.rows.len() < 10 {
            bail!("{name}: need at least 10 rated windows, got {}", m.rows.len());
        }
        let songs = unique_songs(&m);
        if songs.len() < 2 {
            bail!("{name}: need at least 2 rated songs to split");
        }

        let mut reps = Vec::with_capacity(config.eval_repetitions);
        for rep in 0..config.eval_repetitions {
            let rep_seed = derive_seed(config.seed, 0xCC00 ^ ((p as u64) << 16) ^ rep as u64);
            let (train, test) = split_songs(&songs, config.eval_train_frac, rep_seed);
            debug_assert!(train.is_disjoint(&test));
            let (xt, yt, _) = rows_for(&m, &train);
            let (xv, yv, test_song_ids) = rows_for(&m, &test);

            let train_m = FeatureMatrix {
                ids: m.ids.clone(),
                rows: xt.clone(),
                song_ids: Vec::new(),
                starts: Vec::new(),
                ratings: yt.clone(),
            };
            let train_only = FeatureMatrix {
                song_ids: m
                    .song_ids
                    .iter()
                    .zip(&m.rows)
                    .filter(|(s, _)| train.contains(*s))
                    .map(|(s, _)| s.clone())
                    .collect(),
                ..train_m
            };
            let (hidden, _) = choose_hidden(&train_only, config, rep_seed)?;
            let model = elm_train(
                &xt,
                &yt,
                hidden,
                derive_seed(rep_seed, 0xE1A),
                config.elm_lambda,
                config.elm_activation,
            )?;
            let preds = elm_predict(&model, &xv)?;
            let clipped: Vec<f64> = preds.iter().map(|p| p.clipped).collect();
            let nrmse_window = nrmse(&yv, &clipped)?;

            // per-song means vs the song's rating
            let mut song_pred: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
            let mut song_true: std::collections::BTreeMap<&str, f64> = Default::default();
            for (i, sid) in test_song_ids.iter().enumerate() {
                let e = song_pred.entry(sid).or_insert((0.0, 0));
                e.0 += clipped[i];
                e.1 += 1;
                song_true.insert(sid, yv[i]);
            }
            let (ys, ps): (Vec<f64>, Vec<f64>) = song_true
                .iter()
                .map(|(sid, &truth)| {
                    let (sum, n) = song_pred[sid];
                    (truth, sum / n as f64)
                })
                .unzip();
            let nrmse_song = nrmse(&ys, &ps)?;

            reps.push(RepEval { seed: rep_seed, hidden, nrmse_window, nrmse_song });
        }

        // baseline: constant mean-rating predictor on the last split
        let (train, test) = split_songs(&songs, config.eval_train_frac, derive_seed(config.seed, 0xBA5E + p as u64));
        let (_, yt, _) = rows_for(&m, &train);
        let (_, yv, _) = rows_for(&m, &test);
        let mean_rating = yt.iter().sum::<f64>() / yt.len() as f64;
        let baseline_window = nrmse(&yv, &vec![mean_rating; yv.len()])?;

        let (mean_window, std_window) =
            mean_std(&reps.iter().map(|r| r.nrmse_window).collect::<Vec<_>>());
        let (mean_song, std_song) =
            mean_std(&reps.iter().map(|r| r.nrmse_song).collect::<Vec<_>>());
        participants.push(ParticipantEval {
            name,
            reps,
            mean_window,
            std_window,
            mean_song,
            std_song,
            baseline_window,
        });
    }

    let overall_window = mean_std(&participants.iter().map(|p| p.mean_window).collect::<Vec<_>>());
    let overall_song = mean_std(&participants.iter().map(|p| p.mean_song).collect::<Vec<_>>());
    let outcome = EvalOutcome { participants, overall_window, overall_song };
    write_eval_report(out, &spec, config, &outcome)?;
    println!(
        "evaluate: window nrmse {:.4} ± {:.4}, per-song nrmse {:.4} ± {:.4} (across {} participants) → {}",
        outcome.overall_window.0,
        outcome.overall_window.1,
        outcome.overall_song.0,
        outcome.overall_song.1,
        outcome.participants.len(),
        out.display()
    );
    Ok(outcome)
}

fn write_eval_report(
    path: &Path,
    spec: &BiomarkerSpec,
    config: &PipelineConfig,
    outcome: &EvalOutcome,
) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "#eval v1 repetitions={} train_frac={} window={}",
        config.eval_repetitions, config.eval_train_frac, spec.window_s
    )?;
    writeln!(
        w,
        "biomarker {}",
        spec.ids.iter().map(|i| i.canonical()).collect::<Vec<_>>().join(";")
    )?;
    for p in &outcome.participants {
        for (i, rep) in p.reps.iter().enumerate() {
            writeln!(
                w,
                "rep {} {} {} {} {} {}",
                p.name, i, rep.seed, rep.hidden, rep.nrmse_window, rep.nrmse_song
            )?;
        }
        writeln!(
            w,
            "participant {} windows {} {} songs {} {} baseline {}",
            p.name, p.mean_window, p.std_window, p.mean_song, p.std_song, p.baseline_window
        )?;
    }
    writeln!(
        w,
        "overall windows {} {} songs {} {}",
        outcome.overall_window.0,
        outcome.overall_window.1,
        outcome.overall_song.0,
        outcome.overall_song.1
    )?;
    Ok(())
}

// ── sweep ────────────────────────────────────────────────────────────────────

pub struct SweepOutcome {
    pub lengths: Vec<f64>,
    pub mean_r: Vec<f64>,
    pub non_decreasing_steps: usize,
}

/// R-vs-window-length curve over the given session files.
pub fn cmd_sweep(
    session_paths: &[PathBuf],
    biomarker_path: &Path,
    lengths: &[f64],
    config: &PipelineConfig,
    out: &Path,
) -> Result<SweepOutcome> {
    log_stages("sweep");
    let spec = BiomarkerSpec::read_from(biomarker_path)?;
    let sessions: Vec<Session> = session_paths
        .iter()
        .map(|p| Session::read_from(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    let params = config.extract_params();
    let extractor = sweep_extractor(&sessions, &params, &spec.ids);
    let curve = r_vs_window_length(lengths, extractor)?;

    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    writeln!(
        w,
        "#curve v1 biomarker={}",
        spec.ids.iter().map(|i| i.canonical()).collect::<Vec<_>>().join(";")
    )?;
    writeln!(w, "# L <length_s> <mean_R> <skipped_songs> <per-participant R...>")?;
    for point in &curve {
        write!(w, "L {} {} {}", point.length_s, point.mean_r, point.skipped_songs)?;
        for r in &point.per_participant {
            write!(w, " {r}")?;
        }
        writeln!(w)?;
    }
    let steps = curve
        .windows(2)
        .filter(|pair| pair[1].mean_r >= pair[0].mean_r - 1e-9)
        .count();
    writeln!(w, "# non-decreasing steps: {steps} of {}", curve.len().saturating_sub(1))?;

    let outcome = SweepOutcome {
        lengths: curve.iter().map(|p| p.length_s).collect(),
        mean_r: curve.iter().map(|p| p.mean_r).collect(),
        non_decreasing_steps: steps,
    };
    for point in &curve {
        println!("  {:>5.0} s → mean R {:.4}", point.length_s, point.mean_r);
    }
    println!("curve → {}", out.display());
    Ok(outcome)
}
