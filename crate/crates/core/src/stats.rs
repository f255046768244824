//! Distance-correlation dependence measurement and biomarker synthesis.
//!
//! The dependence measure is the distance correlation R: pairwise Euclidean
//! distance matrices are double-centered and the normalized mean of their
//! entrywise product gives a coefficient in [0, 1] that vanishes only under
//! independence and picks up nonlinear relations Pearson correlation misses.
//!
//! Descriptors are ranked by their per-participant R against the listener
//! ratings averaged over participants; a deterministic greedy pass over the
//! ranked list (optionally an exhaustive search over the top k) then grows
//! the composite biomarker while the joint R keeps improving.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::descriptors::DescriptorId;

/// Errors from statistics and selection.
#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("sample lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("ranking is empty")]
    EmptyRanking,
    #[error("feature {0} missing from matrix")]
    MissingFeature(String),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ── Distance correlation ─────────────────────────────────────────────────────

/// Pairwise Euclidean distances of `rows`, flattened row-major n×n.
fn pairwise_distances(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for (a, b) in rows[i].iter().zip(&rows[j]) {
                let diff = a - b;
                acc += diff * diff;
            }
            let dist = acc.sqrt();
            d[i * n + j] = dist;
            d[j * n + i] = dist;
        }
    }
    d
}

/// Double-center a distance matrix in place: subtract row and column means,
/// add back the grand mean.
fn double_center(d: &mut [f64], n: usize) {
    let mut row_mean = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += d[i * n + j];
        }
        row_mean[i] = acc / n as f64;
    }
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] += grand - row_mean[i] - row_mean[j];
        }
    }
}

/// Mean entrywise product of two centered matrices (the squared distance
/// covariance V-statistic).
fn centered_product_mean(a: &[f64], b: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc / (n * n) as f64
}

fn check_rows(rows: &[Vec<f64>]) -> Result<(), StatsError> {
    if rows.len() < 2 {
        return Err(StatsError::TooFewSamples(rows.len()));
    }
    let dim = rows[0].len();
    for r in rows {
        if r.len() != dim {
            return Err(StatsError::SchemaMismatch(format!(
                "row dimensions differ: {} vs {dim}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    Ok(())
}

/// Distance correlation between two vector samples (n×p and n×q).
///
/// Both distance variances may legitimately vanish (constant samples);
/// the convention then is R = 0.
pub fn distance_correlation(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    check_rows(x)?;
    check_rows(y)?;
    let n = x.len();
    let mut a = pairwise_distances(x);
    let mut b = pairwise_distances(y);
    double_center(&mut a, n);
    double_center(&mut b, n);
    let dcov2 = centered_product_mean(&a, &b, n);
    let dvar_x = centered_product_mean(&a, &a, n).max(0.0).sqrt();
    let dvar_y = centered_product_mean(&b, &b, n).max(0.0).sqrt();
    if dvar_x <= 0.0 || dvar_y <= 0.0 {
        return Ok(0.0);
    }
    Ok((dcov2.max(0.0)).sqrt() / (dvar_x * dvar_y).sqrt())
}

/// Distance correlation between two scalar samples.
pub fn distance_correlation_1d(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let xr: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
    let yr: Vec<Vec<f64>> = y.iter().map(|&v| vec![v]).collect();
    distance_correlation(&xr, &yr)
}

/// Nearest-rank percentile of a sample (p in [0, 100]). Used by surrogate
/// significance tests.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

// ── Feature matrices ─────────────────────────────────────────────────────────

/// The full descriptor table of one participant: one row per window, one
/// column per descriptor, NaN marking missing entries, rating per row when
/// the song was rated.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTable {
    pub ids: Vec<DescriptorId>,
    pub rows: Vec<Vec<f64>>,
    pub song_ids: Vec<String>,
    /// Window start times, seconds.
    pub starts: Vec<f64>,
    pub ratings: Vec<Option<f64>>,
    /// Window length used during extraction, seconds.
    pub window_s: f64,
}

/// A complete (no missing values) feature matrix over a descriptor subset,
/// with ratings aligned 1:1 with rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<DescriptorId>,
    pub rows: Vec<Vec<f64>>,
    pub song_ids: Vec<String>,
    pub starts: Vec<f64>,
    pub ratings: Vec<f64>,
}

impl DescriptorTable {
    fn id_index(&self, id: &DescriptorId) -> Result<usize, StatsError> {
        self.ids
            .iter()
            .position(|i| i == id)
            .ok_or_else(|| StatsError::MissingFeature(id.canonical()))
    }

    /// Restrict to `subset`, dropping rows that miss any subset entry or
    /// carry no rating.
    pub fn submatrix(&self, subset: &[DescriptorId]) -> Result<FeatureMatrix, StatsError> {
        let cols: Vec<usize> =
            subset.iter().map(|id| self.id_index(id)).collect::<Result<_, _>>()?;
        let mut out = FeatureMatrix {
            ids: subset.to_vec(),
            rows: Vec::new(),
            song_ids: Vec::new(),
            starts: Vec::new(),
            ratings: Vec::new(),
        };
        for (r, row) in self.rows.iter().enumerate() {
            let Some(rating) = self.ratings[r] else { continue };
            let picked: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
            if picked.iter().all(|v| v.is_finite()) {
                out.rows.push(picked);
                out.song_ids.push(self.song_ids[r].clone());
                out.starts.push(self.starts[r]);
                out.ratings.push(rating);
            }
        }
        Ok(out)
    }

    /// One rated column with its rating vector, missing rows dropped.
    fn rated_column(&self, col: usize) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (r, row) in self.rows.iter().enumerate() {
            if let Some(rating) = self.ratings[r] {
                if row[col].is_finite() {
                    xs.push(row[col]);
                    ys.push(rating);
                }
            }
        }
        (xs, ys)
    }
}

impl FeatureMatrix {
    /// Columns standardized to zero mean and unit variance (zero-variance
    /// columns are left centered only), so no descriptor's scale dominates
    /// joint distances.
    pub fn zscored(&self) -> FeatureMatrix {
        let n = self.rows.len();
        let d = self.ids.len();
        let mut out = self.clone();
        for c in 0..d {
            let mean = self.rows.iter().map(|r| r[c]).sum::<f64>() / n as f64;
            let var = self.rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n as f64;
            let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in 0..n {
                out.rows[r][c] = (self.rows[r][c] - mean) / scale;
            }
        }
        out
    }

    /// Joint distance correlation of the (z-scored) features with ratings.
    pub fn rating_r(&self) -> Result<f64, StatsError> {
        let z = self.zscored();
        let y: Vec<Vec<f64>> = self.ratings.iter().map(|&v| vec![v]).collect();
        distance_correlation(&z.rows, &y)
    }
}

// ── Ranking ──────────────────────────────────────────────────────────────────

/// One ranked descriptor with its cross-participant mean R.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDescriptor {
    pub id: DescriptorId,
    pub mean_r: f64,
    pub per_participant: Vec<f64>,
}

/// Rank every descriptor by its mean univariate R against ratings across
/// participants, descending, ties broken by canonical id order.
pub fn rank_descriptors(
    per_participant: &[DescriptorTable],
) -> Result<Vec<RankedDescriptor>, StatsError> {
    let first = per_participant
        .first()
        .ok_or(StatsError::TooFewSamples(0))?;
    let id_set: BTreeSet<_> = first.ids.iter().collect();
    for (p, table) in per_participant.iter().enumerate().skip(1) {
        let other: BTreeSet<_> = table.ids.iter().collect();
        if other != id_set {
            return Err(StatsError::SchemaMismatch(format!(
                "participant {p} disagrees on the descriptor set"
            )));
        }
    }

    let mut ranked = Vec::with_capacity(first.ids.len());
    for id in &first.ids {
        let mut rs = Vec::with_capacity(per_participant.len());
        for table in per_participant {
            let col = table.id_index(id)?;
            let (xs, ys) = table.rated_column(col);
            let r = if xs.len() >= 2 {
                distance_correlation_1d(&xs, &ys)?
            } else {
                0.0
            };
            rs.push(r);
        }
        let mean_r = rs.iter().sum::<f64>() / rs.len() as f64;
        ranked.push(RankedDescriptor { id: id.clone(), mean_r, per_participant: rs });
    }
    ranked.sort_by(|a, b| {
        b.mean_r
            .total_cmp(&a.mean_r)
            .then_with(|| a.id.canonical().cmp(&b.id.canonical()))
    });
    Ok(ranked)
}

// ── Biomarker selection ──────────────────────────────────────────────────────

/// How the composite biomarker is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Deterministic greedy forward pass over the ranked list.
    Greedy,
    /// Exhaustive search over all non-empty subsets of the top k (k ≤ 12).
    ExhaustiveTopK(usize),
}

/// Selection parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub mode: SelectionMode,
    /// Minimum mean-R improvement required to keep a candidate.
    pub epsilon_gain: f64,
    pub max_features: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { mode: SelectionMode::Greedy, epsilon_gain: 1e-3, max_features: 8 }
    }
}

/// The ordered descriptor subset chosen as the composite biomarker.
#[derive(Debug, Clone, PartialEq)]
pub struct BiomarkerSpec {
    pub ids: Vec<DescriptorId>,
    /// Mean multivariate R achieved by the subset at selection time.
    pub selection_r: f64,
    /// Per-participant R of the selected subset.
    pub per_participant_r: Vec<f64>,
    /// Window length the selection ran on, seconds.
    pub window_s: f64,
}

/// The published default biomarker: normalized temporal asymmetry in β_low,
/// relative α energy at both temporal electrodes, γ_low→γ_high coupling at
/// FP1, and relative θ energy at TP9.
///
/// With `single_temporal_alpha` the α relative energy counts as one feature
/// (TP9 only) instead of two.
pub fn default_biomarker(single_temporal_alpha: bool) -> Vec<DescriptorId> {
    let mut names = vec!["asym_norm:beta_low@temporal", "rel_energy:alpha@TP9"];
    if !single_temporal_alpha {
        names.push("rel_energy:alpha@TP10");
    }
    names.push("pac:gamma_low:gamma_high@FP1");
    names.push("rel_energy:theta@TP9");
    names
        .into_iter()
        .map(|n| DescriptorId::parse(n).expect("default biomarker ids are well-formed"))
        .collect()
}

/// Mean multivariate R of a descriptor subset across participants.
///
/// Each participant's submatrix is z-scored before the joint distance
/// computation; participants with fewer than two usable rows are skipped.
pub fn mean_subset_r(
    per_participant: &[DescriptorTable],
    subset: &[DescriptorId],
) -> Result<(f64, Vec<f64>), StatsError> {
    let mut rs = Vec::with_capacity(per_participant.len());
    let mut usable = 0usize;
    for table in per_participant {
        let m = table.submatrix(subset)?;
        if m.rows.len() < 2 {
            rs.push(0.0);
            continue;
        }
        usable += 1;
        rs.push(m.rating_r()?);
    }
    if usable == 0 {
        return Err(StatsError::TooFewSamples(0));
    }
    let mean = rs.iter().sum::<f64>() / rs.len() as f64;
    Ok((mean, rs))
}

/// Grow the composite biomarker from the ranked list.
///
/// Greedy mode starts with the top descriptor and appends each next one in
/// rank order iff the mean multivariate R improves by at least
/// `epsilon_gain`, stopping after a full pass or at `max_features`.
/// Exhaustive mode scores every non-empty subset of the top k instead.
pub fn select_biomarker(
    ranked: &[RankedDescriptor],
    per_participant: &[DescriptorTable],
    config: &SelectionConfig,
) -> Result<BiomarkerSpec, StatsError> {
    if ranked.is_empty() {
        return Err(StatsError::EmptyRanking);
    }
    let window_s = per_participant.first().map(|t| t.window_s).unwrap_or(0.0);

    let (ids, selection_r, per_r) = match config.mode {
        SelectionMode::Greedy => {
            let mut kept = vec![ranked[0].id.clone()];
            let (mut best_r, mut best_per) = mean_subset_r(per_participant, &kept)?;
            for cand in &ranked[1..] {
                if kept.len() >= config.max_features {
                    break;
                }
                let mut tentative = kept.clone();
                tentative.push(cand.id.clone());
                let (r, per) = mean_subset_r(per_participant, &tentative)?;
                if r >= best_r + config.epsilon_gain {
                    kept = tentative;
                    best_r = r;
                    best_per = per;
                }
            }
            (kept, best_r, best_per)
        }
        SelectionMode::ExhaustiveTopK(k) => {
            let k = k.min(12).min(ranked.len());
            let top: Vec<_> = ranked[..k].iter().map(|r| r.id.clone()).collect();
            let mut best: Option<(Vec<DescriptorId>, f64, Vec<f64>)> = None;
            for mask in 1u32..(1 << k) {
                let subset: Vec<DescriptorId> = (0..k)
                    .filter(|&i| mask & (1 << i) != 0)
                    .map(|i| top[i].clone())
                    .collect();
                let (r, per) = mean_subset_r(per_participant, &subset)?;
                let better = match &best {
                    None => true,
                    Some((ids, br, _)) => {
                        r > *br + 1e-12
                            || ((r - br).abs() <= 1e-12 && subset.len() < ids.len())
                    }
                };
                if better {
                    best = Some((subset, r, per));
                }
            }
            best.expect("at least one subset")
        }
    };

    Ok(BiomarkerSpec { ids, selection_r, per_participant_r: per_r, window_s })
}

// ── Window-length sweep ──────────────────────────────────────────────────────

/// One point of the R-vs-window-length curve.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthPoint {
    pub length_s: f64,
    pub mean_r: f64,
    pub per_participant: Vec<f64>,
    /// Songs too short to host a window at this length, summed over
    /// participants.
    pub skipped_songs: usize,
}

/// Evaluate the biomarker's mean R at several window lengths.
///
/// `extract` re-windows the corpus at one length and returns the
/// per-participant matrices restricted to the biomarker, plus the number of
/// songs skipped as too short. Monotonicity of the resulting curve is
/// reported, never enforced.
pub fn r_vs_window_length<F>(lengths: &[f64], mut extract: F) -> Result<Vec<LengthPoint>, StatsError>
where
    F: FnMut(f64) -> Result<(Vec<FeatureMatrix>, usize), StatsError>,
{
    let mut curve = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let (matrices, skipped) = extract(len)?;
        let mut rs = Vec::with_capacity(matrices.len());
        for m in &matrices {
            rs.push(if m.rows.len() >= 2 { m.rating_r()? } else { 0.0 });
        }
        let mean_r = if rs.is_empty() { 0.0 } else { rs.iter().sum::<f64>() / rs.len() as f64 };
        curve.push(LengthPoint { length_s: len, mean_r, per_participant: rs, skipped_songs: skipped });
    }
    Ok(curve)
}

// ── File formats ─────────────────────────────────────────────────────────────

impl DescriptorTable {
    /// Write the `#features v1` text table: a header line of descriptor
    /// ids, then one `W` line per window.
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<(), StatsError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "#features v1 window={}", self.window_s)?;
        write!(w, "H")?;
        for id in &self.ids {
            write!(w, " {}", id.canonical())?;
        }
        writeln!(w)?;
        for (r, row) in self.rows.iter().enumerate() {
            let rating = match self.ratings[r] {
                Some(v) => format!("{v}"),
                None => "-".to_string(),
            };
            write!(w, "W {} {} {}", self.song_ids[r], self.starts[r], rating)?;
            for v in row {
                if v.is_finite() {
                    write!(w, " {v}")?;
                } else {
                    write!(w, " nan")?;
                }
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a `#features v1` table back.
    pub fn read_from(path: impl AsRef<Path>) -> Result<Self, StatsError> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();

        let (_, header) = lines
            .next()
            .ok_or(StatsError::Format { line: 1, msg: "empty file".into() })?;
        let header = header?;
        let mut window_s = 0.0;
        let mut head_parts = header.split_whitespace();
        if head_parts.next() != Some("#features") || head_parts.next() != Some("v1") {
            return Err(StatsError::Format { line: 1, msg: "expected '#features v1'".into() });
        }
        for kv in head_parts {
            if let Some(("window", v)) = kv.split_once('=') {
                window_s = v.parse().map_err(|e| StatsError::Format {
                    line: 1,
                    msg: format!("bad window: {e}"),
                })?;
            }
        }

        let mut table = DescriptorTable {
            ids: Vec::new(),
            rows: Vec::new(),
            song_ids: Vec::new(),
            starts: Vec::new(),
            ratings: Vec::new(),
            window_s,
        };
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ferr = |msg: String| StatsError::Format { line: lineno, msg };
            if let Some(rest) = line.strip_prefix("H ") {
                table.ids = rest
                    .split_whitespace()
                    .map(|t| {
                        DescriptorId::parse(t).ok_or_else(|| ferr(format!("bad descriptor id {t:?}")))
                    })
                    .collect::<Result<_, _>>()?;
            } else if let Some(rest) = line.strip_prefix("W ") {
                if table.ids.is_empty() {
                    return Err(ferr("window row before header".into()));
                }
                let mut parts = rest.split_whitespace();
                let song = parts.next().ok_or_else(|| ferr("missing song id".into()))?;
                let start: f64 = parts
                    .next()
                    .ok_or_else(|| ferr("missing start".into()))?
                    .parse()
                    .map_err(|e| ferr(format!("bad start: {e}")))?;
                let rating_tok = parts.next().ok_or_else(|| ferr("missing rating".into()))?;
                let rating = match rating_tok {
                    "-" => None,
                    v => Some(v.parse().map_err(|e| ferr(format!("bad rating: {e}")))?),
                };
                let values: Vec<f64> = parts
                    .map(|t| {
                        if t == "nan" {
                            Ok(f64::NAN)
                        } else {
                            t.parse().map_err(|e| ferr(format!("bad value: {e}")))
                        }
                    })
                    .collect::<Result<_, _>>()?;
                if values.len() != table.ids.len() {
                    return Err(ferr(format!(
                        "row has {} values, header has {}",
                        values.len(),
                        table.ids.len()
                    )));
                }
                table.song_ids.push(song.to_string());
                table.starts.push(start);
                table.ratings.push(rating);
                table.rows.push(values);
            } else {
                return Err(ferr(format!("unknown record {:?}", &line[..line.len().min(12)])));
            }
        }
        Ok(table)
    }
}

impl BiomarkerSpec {
    /// Write the `#biomarker v1` spec file.
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<(), StatsError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "#biomarker v1")?;
        for id in &self.ids {
            writeln!(w, "D {}", id.canonical())?;
        }
        writeln!(w, "R {}", self.selection_r)?;
        if !self.per_participant_r.is_empty() {
            write!(w, "P")?;
            for r in &self.per_participant_r {
                write!(w, " {r}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "W {}", self.window_s)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self, StatsError> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut spec = BiomarkerSpec {
            ids: Vec::new(),
            selection_r: 0.0,
            per_participant_r: Vec::new(),
            window_s: 0.0,
        };
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let line = line.trim_end();
            let ferr = |msg: String| StatsError::Format { line: lineno, msg };
            if lineno == 1 {
                if line != "#biomarker v1" {
                    return Err(ferr("expected '#biomarker v1'".into()));
                }
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("D ") {
                spec.ids.push(
                    DescriptorId::parse(rest.trim())
                        .ok_or_else(|| ferr(format!("bad descriptor id {rest:?}")))?,
                );
            } else if let Some(rest) = line.strip_prefix("R ") {
                spec.selection_r =
                    rest.trim().parse().map_err(|e| ferr(format!("bad R: {e}")))?;
            } else if line == "P" {
                spec.per_participant_r = Vec::new();
            } else if let Some(rest) = line.strip_prefix("P ") {
                spec.per_participant_r = rest
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|e| ferr(format!("bad P value: {e}"))))
                    .collect::<Result<_, _>>()?;
            } else if let Some(rest) = line.strip_prefix("W ") {
                spec.window_s =
                    rest.trim().parse().map_err(|e| ferr(format!("bad W: {e}")))?;
            } else {
                return Err(ferr(format!("unknown record {:?}", &line[..line.len().min(12)])));
            }
        }
        if spec.ids.is_empty() {
            return Err(StatsError::EmptyRanking);
        }
        Ok(spec)
    }
}
