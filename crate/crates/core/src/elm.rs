//! Extreme-learning-machine regression: a single hidden layer whose input
//! weights are drawn once from a seeded RNG and never trained, plus a
//! least-squares linear readout.
//!
//! Training standardizes the features, evaluates the random hidden layer,
//! and solves the readout by SVD (minimum-norm when the hidden matrix is
//! rank-deficient; ridge-stabilized when λ > 0). Everything is
//! deterministic given the seed: neuron i draws its weights from stream i
//! of a counter-based RNG, so widening the layer reuses the existing
//! neurons' weights unchanged.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Rating span of the 1..5 score scale; NRMSE divides RMSE by this.
pub const SCORE_RANGE: f64 = 4.0;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Logistic,
    Tanh,
    Rectifier,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Rectifier => z.max(0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Logistic => "logistic",
            Activation::Tanh => "tanh",
            Activation::Rectifier => "rectifier",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "logistic" => Some(Activation::Logistic),
            "tanh" => Some(Activation::Tanh),
            "rectifier" => Some(Activation::Rectifier),
            _ => None,
        }
    }
}

/// ELM errors.
#[derive(Debug, thiserror::Error)]
pub enum ElmError {
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("expected {expected} feature columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("least-squares solve failed: {0}")]
    SolveFailed(String),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One prediction: the raw readout and its clip into the score range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePrediction {
    pub raw: f64,
    pub clipped: f64,
}

impl ScorePrediction {
    fn from_raw(raw: f64) -> Self {
        Self { raw, clipped: raw.clamp(1.0, 5.0) }
    }
}

/// A trained model: frozen random hidden layer plus learned readout.
///
/// The readout is fitted to the mean-centered targets and predictions add
/// the training mean back, so constant targets are reproduced exactly and
/// the hidden layer spends no capacity on the score offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmModel {
    pub input_dim: usize,
    pub hidden_count: usize,
    /// Row-major hidden_count × input_dim.
    pub input_weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    /// Training-target mean, added back at prediction time.
    pub target_mean: f64,
    pub activation: Activation,
    pub feat_mean: Vec<f64>,
    pub feat_scale: Vec<f64>,
    /// Indices of zero-variance features whose scale was pinned to 1.
    pub degenerate_features: Vec<usize>,
    pub rng_seed: u64,
    pub ridge_lambda: f64,
}

/// Draw the frozen layer for `hidden` neurons: neuron i takes its row and
/// bias from RNG stream i, uniform on (−1, 1).
fn random_layer(hidden: usize, input_dim: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut weights = Vec::with_capacity(hidden * input_dim);
    let mut biases = Vec::with_capacity(hidden);
    for neuron in 0..hidden {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(neuron as u64 + 1);
        for _ in 0..input_dim {
            weights.push(rng.random::<f64>() * 2.0 - 1.0);
        }
        biases.push(rng.random::<f64>() * 2.0 - 1.0);
    }
    (weights, biases)
}

fn standardize_stats(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let n = x.len();
    let d = x[0].len();
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut scale = vec![0.0; d];
    for row in x {
        for c in 0..d {
            let dev = row[c] - mean[c];
            scale[c] += dev * dev;
        }
    }
    let mut degenerate = Vec::new();
    for (c, s) in scale.iter_mut().enumerate() {
        *s = (*s / n as f64).sqrt();
        // variance at the float-noise level counts as constant
        if *s <= 1e-12 * mean[c].abs().max(1.0) {
            *s = 1.0;
            degenerate.push(c);
        }
    }
    (mean, scale, degenerate)
}

/// Hidden activations for standardized input rows.
fn hidden_matrix(model: &ElmModel, x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.len();
    let h = model.hidden_count;
    DMatrix::from_fn(n, h, |r, j| {
        let mut z = model.biases[j];
        let row = &model.input_weights[j * model.input_dim..(j + 1) * model.input_dim];
        for ((&xv, w), (mean, scale)) in x[r]
            .iter()
            .zip(row)
            .zip(model.feat_mean.iter().zip(&model.feat_scale))
        {
            z += w * ((xv - mean) / scale);
        }
        model.activation.apply(z)
    })
}

/// Minimum-norm least-squares via SVD, with small singular values dropped
/// relative to the largest.
fn solve_least_squares(h: DMatrix<f64>, y: DMatrix<f64>) -> Result<Vec<f64>, ElmError> {
    let max_dim = h.nrows().max(h.ncols()) as f64;
    let svd = h.svd(true, true);
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let eps = if sigma_max > 0.0 {
        sigma_max * max_dim * f64::EPSILON
    } else {
        f64::EPSILON
    };
    let beta = svd.solve(&y, eps).map_err(|e| ElmError::SolveFailed(e.to_string()))?;
    Ok(beta.column(0).iter().copied().collect())
}

/// Train a model: freeze the random layer from `seed`, standardize by the
/// training statistics, and solve the readout
/// `min ‖H·β − y‖² (+ λ‖β‖²)`.
pub fn elm_train(
    x: &[Vec<f64>],
    y: &[f64],
    hidden_count: usize,
    seed: u64,
    ridge_lambda: f64,
    activation: Activation,
) -> Result<ElmModel, ElmError> {
    if x.is_empty() || y.is_empty() {
        return Err(ElmError::EmptyInput);
    }
    if x.len() != y.len() {
        return Err(ElmError::LengthMismatch(x.len(), y.len()));
    }
    let d = x[0].len();
    if d == 0 || hidden_count == 0 {
        return Err(ElmError::BadArguments(
            "input_dim and hidden_count must be ≥ 1".into(),
        ));
    }
    if ridge_lambda < 0.0 {
        return Err(ElmError::BadArguments("ridge_lambda must be ≥ 0".into()));
    }
    for row in x {
        if row.len() != d {
            return Err(ElmError::DimensionMismatch { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ElmError::NonFinite);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ElmError::NonFinite);
    }

    let (feat_mean, feat_scale, degenerate_features) = standardize_stats(x);
    let (input_weights, biases) = random_layer(hidden_count, d, seed);
    let target_mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut model = ElmModel {
        input_dim: d,
        hidden_count,
        input_weights,
        biases,
        output_weights: Vec::new(),
        target_mean,
        activation,
        feat_mean,
        feat_scale,
        degenerate_features,
        rng_seed: seed,
        ridge_lambda,
    };

    let h = hidden_matrix(&model, x);
    let n = x.len();
    let centered: Vec<f64> = y.iter().map(|v| v - target_mean).collect();
    let (h_full, y_full) = if ridge_lambda > 0.0 {
        // ridge as a stacked least-squares problem: [H; √λ·I] β = [ỹ; 0]
        let sqrt_l = ridge_lambda.sqrt();
        let mut stacked = DMatrix::zeros(n + hidden_count, hidden_count);
        stacked.view_mut((0, 0), (n, hidden_count)).copy_from(&h);
        for j in 0..hidden_count {
            stacked[(n + j, j)] = sqrt_l;
        }
        let mut ys = DMatrix::zeros(n + hidden_count, 1);
        for (r, &v) in centered.iter().enumerate() {
            ys[(r, 0)] = v;
        }
        (stacked, ys)
    } else {
        (h, DMatrix::from_iterator(n, 1, centered.iter().copied()))
    };
    model.output_weights = solve_least_squares(h_full, y_full)?;
    Ok(model)
}

/// Predict scores for feature rows, raw and clipped into [1, 5].
pub fn elm_predict(model: &ElmModel, x: &[Vec<f64>]) -> Result<Vec<ScorePrediction>, ElmError> {
    for row in x {
        if row.len() != model.input_dim {
            return Err(ElmError::DimensionMismatch {
                expected: model.input_dim,
                got: row.len(),
            });
        }
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let h = hidden_matrix(model, x);
    let mut out = Vec::with_capacity(x.len());
    for r in 0..x.len() {
        let mut acc = model.target_mean;
        for j in 0..model.hidden_count {
            acc += h[(r, j)] * model.output_weights[j];
        }
        out.push(ScorePrediction::from_raw(acc));
    }
    Ok(out)
}

/// Root-mean-square error normalized by the score range (4).
pub fn nrmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, ElmError> {
    if y_true.len() != y_pred.len() {
        return Err(ElmError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(ElmError::EmptyInput);
    }
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt() / SCORE_RANGE)
}

// ── Hidden-width selection ───────────────────────────────────────────────────

/// Acceptance rule for the hidden-width sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiddenSelectConfig {
    /// Training error a converged candidate must undercut.
    pub error_target: f64,
    /// Maximum |train − validation| NRMSE gap that still counts as
    /// converged.
    pub convergence_tol: f64,
    /// Slack over the best validation NRMSE seen so far.
    pub val_slack: f64,
}

impl Default for HiddenSelectConfig {
    fn default() -> Self {
        Self { error_target: 0.01, convergence_tol: 0.02, val_slack: 0.005 }
    }
}

/// One sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenCandidateReport {
    pub hidden_count: usize,
    pub nrmse_train: f64,
    pub nrmse_val: f64,
}

/// Sweep result: the chosen width, the per-candidate table, and whether any
/// candidate met the convergence rule.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSelection {
    pub hidden_count: usize,
    pub report: Vec<HiddenCandidateReport>,
    pub converged: bool,
}

/// Choose the smallest hidden width whose training error is below the
/// target while training and validation errors agree; fall back to the
/// validation argmin (flagged `converged: false`) when none qualifies.
#[allow(clippy::too_many_arguments)]
pub fn select_hidden_count(
    x_train: &[Vec<f64>],
    y_train: &[f64],
    x_val: &[Vec<f64>],
    y_val: &[f64],
    candidates: &[usize],
    seed: u64,
    ridge_lambda: f64,
    activation: Activation,
    config: &HiddenSelectConfig,
) -> Result<HiddenSelection, ElmError> {
    if candidates.is_empty() {
        return Err(ElmError::BadArguments("no hidden-count candidates".into()));
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ElmError::BadArguments(
            "candidates must be strictly ascending".into(),
        ));
    }

    let mut report = Vec::with_capacity(candidates.len());
    for &h in candidates {
        let model = elm_train(x_train, y_train, h, seed, ridge_lambda, activation)?;
        let train_pred: Vec<f64> =
            elm_predict(&model, x_train)?.iter().map(|p| p.raw).collect();
        let val_pred: Vec<f64> = elm_predict(&model, x_val)?.iter().map(|p| p.raw).collect();
        report.push(HiddenCandidateReport {
            hidden_count: h,
            nrmse_train: nrmse(y_train, &train_pred)?,
            nrmse_val: nrmse(y_val, &val_pred)?,
        });
    }

    let mut best_val = f64::INFINITY;
    let mut chosen = None;
    for row in &report {
        best_val = best_val.min(row.nrmse_val);
        let converged = row.nrmse_train < config.error_target
            && (row.nrmse_train - row.nrmse_val).abs() < config.convergence_tol
            && row.nrmse_val <= best_val + config.val_slack;
        if converged {
            chosen = Some(row.hidden_count);
            break;
        }
    }
    match chosen {
        Some(h) => Ok(HiddenSelection { hidden_count: h, report, converged: true }),
        None => {
            let argmin = report
                .iter()
                .min_by(|a, b| a.nrmse_val.total_cmp(&b.nrmse_val))
                .expect("non-empty report")
                .hidden_count;
            Ok(HiddenSelection { hidden_count: argmin, report, converged: false })
        }
    }
}

// ── Model file ───────────────────────────────────────────────────────────────

impl ElmModel {
    /// Write the `#elm v1` model file. Floats use the shortest exact
    /// decimal form, so loading reproduces predictions bit for bit.
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<(), ElmError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "#elm v1")?;
        writeln!(w, "dim {}", self.input_dim)?;
        writeln!(w, "hidden {}", self.hidden_count)?;
        writeln!(w, "activation {}", self.activation.name())?;
        writeln!(w, "seed {}", self.rng_seed)?;
        writeln!(w, "lambda {:e}", self.ridge_lambda)?;
        writeln!(w, "ymean {}", self.target_mean)?;
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        writeln!(w, "mean {}", join(&self.feat_mean))?;
        writeln!(w, "scale {}", join(&self.feat_scale))?;
        let degen = self
            .degenerate_features
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(w, "degenerate {degen}")?;
        for j in 0..self.hidden_count {
            let row = &self.input_weights[j * self.input_dim..(j + 1) * self.input_dim];
            writeln!(w, "W {}", join(row))?;
        }
        writeln!(w, "b {}", join(&self.biases))?;
        writeln!(w, "beta {}", join(&self.output_weights))?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self, ElmError> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut dim = None;
        let mut hidden = None;
        let mut activation = None;
        let mut seed = None;
        let mut lambda = None;
        let mut ymean = None;
        let mut mean = None;
        let mut scale = None;
        let mut degenerate = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut biases = None;
        let mut beta = None;

        let parse_floats = |line: usize, s: &str| -> Result<Vec<f64>, ElmError> {
            s.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| ElmError::Format { line, msg: format!("bad float: {e}") })
                })
                .collect()
        };

        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let line = line.trim_end();
            let ferr = |msg: String| ElmError::Format { line: lineno, msg };
            if lineno == 1 {
                if line != "#elm v1" {
                    return Err(ferr("expected '#elm v1'".into()));
                }
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "dim" => dim = Some(rest.parse().map_err(|e| ferr(format!("bad dim: {e}")))?),
                "hidden" => {
                    hidden = Some(rest.parse().map_err(|e| ferr(format!("bad hidden: {e}")))?)
                }
                "activation" => {
                    activation = Some(
                        Activation::from_name(rest)
                            .ok_or_else(|| ferr(format!("unknown activation {rest:?}")))?,
                    )
                }
                "seed" => seed = Some(rest.parse().map_err(|e| ferr(format!("bad seed: {e}")))?),
                "lambda" => {
                    lambda = Some(rest.parse().map_err(|e| ferr(format!("bad lambda: {e}")))?)
                }
                "ymean" => {
                    ymean = Some(rest.parse().map_err(|e| ferr(format!("bad ymean: {e}")))?)
                }
                "mean" => mean = Some(parse_floats(lineno, rest)?),
                "scale" => scale = Some(parse_floats(lineno, rest)?),
                "degenerate" => {
                    degenerate = rest
                        .split_whitespace()
                        .map(|t| {
                            t.parse::<usize>()
                                .map_err(|e| ferr(format!("bad index: {e}")))
                        })
                        .collect::<Result<_, _>>()?
                }
                "W" => weights.extend(parse_floats(lineno, rest)?),
                "b" => biases = Some(parse_floats(lineno, rest)?),
                "beta" => beta = Some(parse_floats(lineno, rest)?),
                other => return Err(ferr(format!("unknown field {other:?}"))),
            }
        }

        let missing = |what: &str| ElmError::Format { line: 0, msg: format!("missing {what}") };
        let model = ElmModel {
            input_dim: dim.ok_or_else(|| missing("dim"))?,
            hidden_count: hidden.ok_or_else(|| missing("hidden"))?,
            input_weights: weights,
            biases: biases.ok_or_else(|| missing("b"))?,
            output_weights: beta.ok_or_else(|| missing("beta"))?,
            target_mean: ymean.ok_or_else(|| missing("ymean"))?,
            activation: activation.ok_or_else(|| missing("activation"))?,
            feat_mean: mean.ok_or_else(|| missing("mean"))?,
            feat_scale: scale.ok_or_else(|| missing("scale"))?,
            degenerate_features: degenerate,
            rng_seed: seed.ok_or_else(|| missing("seed"))?,
            ridge_lambda: lambda.ok_or_else(|| missing("lambda"))?,
        };
        if model.input_weights.len() != model.hidden_count * model.input_dim
            || model.biases.len() != model.hidden_count
            || model.output_weights.len() != model.hidden_count
            || model.feat_mean.len() != model.input_dim
            || model.feat_scale.len() != model.input_dim
        {
            return Err(ElmError::Format { line: 0, msg: "inconsistent dimensions".into() });
        }
        Ok(model)
    }
}
