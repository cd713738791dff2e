//! Federated distribution learning: clients run local gradient descent on
//! their MMD objective against shared landmarks and the server aggregates
//! either the local landmarks or the local gradients.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{DataMatrix, KernelParams, MmdObjective};
use crate::linalg::pairwise_sum;
use crate::privacy::{self, NoiseSource, PrivacyMode, PrivacySpec, SensitivityParams};
use crate::rng::{self, purpose};

const SERVER: u64 = u64::MAX;

/// One client's private data block and aggregation weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub id: usize,
    pub data: DataMatrix,
    pub weight: f64,
    /// Global index of every column of `data`.
    pub point_ids: Vec<usize>,
}

impl ClientShard {
    pub fn new(id: usize, data: DataMatrix, weight: f64, point_ids: Vec<usize>) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "client {id} holds {} points; at least two are required",
                data.len()
            )));
        }
        if point_ids.len() != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "client {id}: {} point ids for {} points",
                point_ids.len(),
                data.len()
            )));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidArgument(format!("client {id}: weight {weight}")));
        }
        Ok(Self {
            id,
            data,
            weight,
            point_ids,
        })
    }

    /// Per-feature mean and population variance: the only statistics a client
    /// reveals for [`InitMode::SeedSample`].
    pub fn summary(&self) -> ShardSummary {
        let (m, n) = (self.data.dim(), self.data.len());
        let mat = self.data.as_matrix();
        let mut mean = vec![0.0; m];
        let mut var = vec![0.0; m];
        for i in 0..m {
            let row: Vec<f64> = (0..n).map(|j| mat[(i, j)]).collect();
            let mu = pairwise_sum(&row) / n as f64;
            let dev: Vec<f64> = row.iter().map(|v| (v - mu) * (v - mu)).collect();
            mean[i] = mu;
            var[i] = pairwise_sum(&dev) / n as f64;
        }
        ShardSummary { n, mean, var }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardSummary {
    pub n: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `Y = Σ ω_p Y_p`.
    #[default]
    AverageLandmarks,
    /// `Y = Y_prev − η′ Σ ω_p ∇f_p(Y_p)`.
    AverageGradients,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitMode {
    /// i.i.d. `N(0, scale²)` entries.
    GaussianScaled { scale: f64 },
    /// Samples from the diagonal Gaussian fitted to the pooled per-client
    /// feature means and variances.
    SeedSample,
}

impl Default for InitMode {
    fn default() -> Self {
        InitMode::SeedSample
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_steps: usize,
    pub step_size: f64,
    /// Used by [`Aggregation::AverageGradients`] only.
    pub server_step_size: f64,
    pub aggregation: Aggregation,
    pub n_landmarks: usize,
    pub init: InitMode,
    pub seed: u64,
    /// Evaluate the global objective at every logged step (costs one extra
    /// cross-kernel per client and step).
    pub trace_objective: bool,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be >= 1".into()));
        }
        if self.n_landmarks < 2 {
            return Err(Error::Config(format!("n_landmarks must be >= 2, got {}", self.n_landmarks)));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::Config(format!("step_size must be >= 0, got {}", self.step_size)));
        }
        if self.aggregation == Aggregation::AverageGradients
            && !(self.server_step_size.is_finite() && self.server_step_size >= 0.0)
        {
            return Err(Error::Config(format!(
                "server_step_size must be >= 0, got {}",
                self.server_step_size
            )));
        }
        if let InitMode::GaussianScaled { scale } = self.init {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(Error::Config(format!("init scale must be >= 0, got {scale}")));
            }
        }
        Ok(())
    }
}

/// Server-side initial landmarks `Y⁰` (`dim × n_landmarks`).
pub fn init_landmarks(dim: usize, summaries: &[ShardSummary], config: &FedConfig) -> Result<DataMatrix> {
    if config.n_landmarks < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_landmarks must be >= 2, got {}",
            config.n_landmarks
        )));
    }
    let mut rng = rng::stream(config.seed, &[purpose::LANDMARK_INIT]);
    let ny = config.n_landmarks;
    let values = match config.init {
        InitMode::GaussianScaled { scale } => (0..dim * ny)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        InitMode::SeedSample => {
            if summaries.is_empty() || summaries.iter().any(|s| s.mean.len() != dim) {
                return Err(Error::InvalidArgument("seed-sample init needs per-client summaries".into()));
            }
            let total: usize = summaries.iter().map(|s| s.n).sum();
            let mut mean = vec![0.0; dim];
            let mut var = vec![0.0; dim];
            for i in 0..dim {
                let w = |s: &ShardSummary| s.n as f64 / total as f64;
                let mu: f64 = summaries.iter().map(|s| w(s) * s.mean[i]).sum();
                // pooled variance: within-client plus between-client spread
                let v: f64 = summaries
                    .iter()
                    .map(|s| w(s) * (s.var[i] + (s.mean[i] - mu) * (s.mean[i] - mu)))
                    .sum();
                mean[i] = mu;
                var[i] = v.max(0.0);
            }
            let mut values = Vec::with_capacity(dim * ny);
            for _ in 0..ny {
                for i in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    values.push(if var[i] > 0.0 { mean[i] + var[i].sqrt() * z } else { mean[i] });
                }
            }
            values
        }
    };
    DataMatrix::from_column_major(dim, ny, values)
}

/// Result of one client's local descent.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    /// `Y_p^{s,Q}`.
    pub landmarks: DataMatrix,
    /// Gradients applied at steps `t = 1..Q`.
    pub gradients: Vec<DataMatrix>,
    /// Iterates `Y_p^{s,1} .. Y_p^{s,Q}`.
    pub iterates: Vec<DataMatrix>,
}

/// `Q` plain gradient steps `Y ← Y − η ∇f_p(Y)` on one client.
pub fn local_update(
    y: &DataMatrix,
    shard: &ClientShard,
    params: KernelParams,
    step_size: f64,
    local_steps: usize,
) -> Result<LocalUpdate> {
    let objective = MmdObjective::new(&shard.data, params)?;
    local_descent(y, &objective, step_size, local_steps, f64::INFINITY, |_, g| Ok(g))
}

/// Local descent with a hook that may replace the final-step gradient
/// (gradient perturbation) and a Frobenius-norm divergence ceiling.
fn local_descent<F>(
    y: &DataMatrix,
    objective: &MmdObjective<'_>,
    step_size: f64,
    local_steps: usize,
    norm_ceiling: f64,
    mut final_gradient: F,
) -> Result<LocalUpdate>
where
    F: FnMut(usize, DataMatrix) -> Result<DataMatrix>,
{
    if local_steps == 0 {
        return Err(Error::InvalidArgument("local_steps must be >= 1".into()));
    }
    let mut current = y.clone();
    let mut gradients = Vec::with_capacity(local_steps);
    let mut iterates = Vec::with_capacity(local_steps);
    for t in 1..=local_steps {
        let mut g = objective.gradient(&current)?;
        if t == local_steps {
            g = final_gradient(t, g)?;
        }
        let next = current.as_matrix() - g.as_matrix() * step_size;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite landmarks at local step {t}; step size too large"
            )));
        }
        let next = DataMatrix::from_matrix_unchecked(next);
        if next.frobenius_norm() > norm_ceiling {
            return Err(Error::Numerical(format!(
                "landmark norm exceeded 1e6 x its initial value at local step {t}; step size too large"
            )));
        }
        gradients.push(g);
        iterates.push(next.clone());
        current = next;
    }
    Ok(LocalUpdate {
        landmarks: current,
        gradients,
        iterates,
    })
}

fn weighted_sum(items: &[&DataMatrix], weights: &[f64]) -> Result<DMatrix<f64>> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("no contributions to aggregate".into()))?;
    if weights.len() != items.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} contributions",
            weights.len(),
            items.len()
        )));
    }
    let shape = first.as_matrix().shape();
    let mut acc = DMatrix::<f64>::zeros(shape.0, shape.1);
    for (item, &w) in items.iter().zip(weights) {
        if item.as_matrix().shape() != shape {
            return Err(Error::DimensionMismatch(format!(
                "contribution shape {:?} differs from {:?}",
                item.as_matrix().shape(),
                shape
            )));
        }
        acc.zip_apply(item.as_matrix(), |a, b| *a += w * b);
    }
    Ok(acc)
}

/// Server aggregation, reducing contributions in the given (client-id) order.
///
/// `contributions` are local landmarks for [`Aggregation::AverageLandmarks`]
/// and local gradients for [`Aggregation::AverageGradients`].
pub fn aggregate(
    contributions: &[DataMatrix],
    mode: Aggregation,
    weights: &[f64],
    y_prev: &DataMatrix,
    server_step_size: f64,
) -> Result<DataMatrix> {
    let refs: Vec<&DataMatrix> = contributions.iter().collect();
    let avg = weighted_sum(&refs, weights)?;
    let out = match mode {
        Aggregation::AverageLandmarks => avg,
        Aggregation::AverageGradients => {
            if avg.shape() != y_prev.as_matrix().shape() {
                return Err(Error::DimensionMismatch("gradient and landmark shapes differ".into()));
            }
            y_prev.as_matrix() - avg * server_step_size
        }
    };
    DataMatrix::new(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub round: usize,
    pub local_step: usize,
    /// `F(Y) = Σ ω_p f_p(Y)` at the averaged iterate, when traced.
    pub objective: Option<f64>,
    /// `‖Y^{s,t} − Y^{s,t−1}‖²_F` of the averaged iterate.
    pub displacement_sq: f64,
    /// Wall-clock since the start of the round.
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RoundTrace {
    pub initial_objective: Option<f64>,
    pub entries: Vec<TraceEntry>,
}

impl RoundTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.entries.last().and_then(|e| e.objective).or(self.initial_objective)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "local_step", "F", "displacement_sq", "elapsed_ms"])
            .map_err(csv_err)?;
        for e in &self.entries {
            w.write_record([
                e.round.to_string(),
                e.local_step.to_string(),
                e.objective.map(|v| format!("{v:e}")).unwrap_or_default(),
                format!("{:e}", e.displacement_sq),
                format!("{:.3}", e.elapsed_ms),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Mean squared landmark displacement `(1/SQ) Σ_s Σ_t ‖Y^{s,t} − Y^{s,t−1}‖²_F`.
/// Returns 0 for an empty trace.
pub fn convergence_diagnostic(trace: &RoundTrace) -> f64 {
    if trace.entries.is_empty() {
        return 0.0;
    }
    let d: Vec<f64> = trace.entries.iter().map(|e| e.displacement_sq).collect();
    pairwise_sum(&d) / d.len() as f64
}

/// Noise parameters actually used, echoed into run manifests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPrivacy {
    pub mode: PrivacyMode,
    /// Per-client gradient noise std when calibrated from (ε, δ).
    pub calibrated_sigma: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub tau_x: Option<f64>,
    /// Largest landmark-to-point distance observed on the local iterates.
    pub observed_upsilon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub landmarks: DataMatrix,
    pub initial_landmarks: DataMatrix,
    pub trace: RoundTrace,
    /// Client data as seen by the protocol (perturbed in data mode).
    pub client_data: Vec<DataMatrix>,
    pub privacy: ResolvedPrivacy,
}

/// Applies one-shot data perturbation when the privacy mode asks for it.
pub fn prepare_shards(shards: &[ClientShard], privacy: &PrivacySpec) -> Result<Vec<ClientShard>> {
    let source = privacy.noise_source()?;
    if privacy.mode != PrivacyMode::DataPerturb {
        return Ok(shards.to_vec());
    }
    shards
        .iter()
        .map(|s| {
            let seed = rng::mix(privacy.seed, &[purpose::DATA_NOISE, s.id as u64]);
            let sigma = match source {
                Some(NoiseSource::Absolute { sigma }) => sigma,
                Some(NoiseSource::Relative { beta }) => {
                    beta * privacy::population_std(s.data.as_matrix().as_slice())
                }
                _ => unreachable!("validated by noise_source"),
            };
            let data = privacy::perturb_data(&s.data, sigma, seed)?;
            Ok(ClientShard { data, ..s.clone() })
        })
        .collect()
}

fn max_column_norm(shards: &[ClientShard]) -> f64 {
    shards
        .iter()
        .flat_map(|s| (0..s.data.len()).map(move |j| s.data.point(j)))
        .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn max_landmark_distance(x: &DataMatrix, y: &DataMatrix) -> f64 {
    crate::kernel::pairwise_sq_dist(x, y)
        .map(|d| d.iter().cloned().fold(0.0, f64::max).sqrt())
        .unwrap_or(0.0)
}

/// Runs the full federated loop from `Y⁰` built per `config.init`.
pub fn run_feddl(
    shards: &[ClientShard],
    config: &FedConfig,
    params: KernelParams,
    privacy: &PrivacySpec,
) -> Result<FedOutcome> {
    let dim = shards
        .first()
        .ok_or_else(|| Error::InvalidArgument("no client shards".into()))?
        .data
        .dim();
    let effective = prepare_shards(shards, privacy)?;
    let summaries: Vec<ShardSummary> = effective.iter().map(ClientShard::summary).collect();
    let y0 = init_landmarks(dim, &summaries, config)?;
    run_feddl_from(shards, y0, config, params, privacy)
}

/// Runs the federated loop from explicit initial landmarks.
///
/// `rounds = 0` returns `y0` unchanged with an empty trace.
pub fn run_feddl_from(
    shards: &[ClientShard],
    y0: DataMatrix,
    config: &FedConfig,
    params: KernelParams,
    privacy: &PrivacySpec,
) -> Result<FedOutcome> {
    config.validate()?;
    if shards.is_empty() {
        return Err(Error::InvalidArgument("no client shards".into()));
    }
    let dim = shards[0].data.dim();
    if let Some(s) = shards.iter().find(|s| s.data.dim() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "client {} has {} features, client {} has {dim}",
            s.id,
            s.data.dim(),
            shards[0].id
        )));
    }
    if y0.dim() != dim {
        return Err(Error::DimensionMismatch("initial landmarks and data differ in dimension".into()));
    }
    let weights: Vec<f64> = shards.iter().map(|s| s.weight).collect();
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("client weights sum to {wsum}, expected 1")));
    }
    let source = privacy.noise_source()?;
    let effective = prepare_shards(shards, privacy)?;
    let objectives: Vec<MmdObjective<'_>> = effective
        .iter()
        .map(|s| MmdObjective::new(&s.data, params))
        .collect::<Result<_>>()?;

    let mut resolved = ResolvedPrivacy {
        mode: privacy.mode,
        ..ResolvedPrivacy::default()
    };
    let mut gradient_sigma = vec![None; shards.len()];
    if let Some(NoiseSource::Calibrated { epsilon, delta }) = source {
        let tau_x = privacy.tau_x.unwrap_or_else(|| max_column_norm(shards));
        resolved.tau_x = Some(tau_x);
        for (p, shard) in shards.iter().enumerate() {
            let sens = privacy::sensitivity_delta(&SensitivityParams {
                tau_x,
                tau_y: privacy.tau_y.unwrap_or_default(),
                upsilon: privacy.upsilon.unwrap_or_default(),
                gamma: params.gamma,
                n_p: shard.data.len(),
                n_y: y0.len(),
                rounds: config.rounds.max(1),
            })?;
            let sigma = privacy::gaussian_sigma_for_dp(epsilon, delta, config.rounds.max(1), sens)?;
            resolved.sensitivity.push(sens);
            resolved.calibrated_sigma.push(sigma);
            gradient_sigma[p] = Some(sigma);
        }
    }

    let global_objective = |y: &DataMatrix| -> Result<f64> {
        let vals: Vec<f64> = objectives
            .iter()
            .zip(&weights)
            .map(|(o, w)| o.value(y).map(|v| w * v))
            .collect::<Result<_>>()?;
        Ok(vals.iter().sum())
    };

    let norm_ceiling = 1e6 * y0.frobenius_norm().max(1.0);
    let mut trace = RoundTrace {
        initial_objective: if config.trace_objective {
            Some(global_objective(&y0)?)
        } else {
            None
        },
        entries: Vec::with_capacity(config.rounds * config.local_steps),
    };
    let mut y = y0.clone();
    let mut observed_upsilon: f64 = 0.0;

    for round in 1..=config.rounds {
        let started = Instant::now();
        let gradient_mode = privacy.mode == PrivacyMode::GradientPerturb;
        let updates: Vec<Result<(LocalUpdate, Option<DataMatrix>)>> = objectives
            .par_iter()
            .enumerate()
            .map(|(p, objective)| {
                let client = shards[p].id;
                let noise_seed = rng::mix(
                    privacy.seed,
                    &[purpose::GRADIENT_NOISE, client as u64, round as u64],
                );
                let perturb = |g: DataMatrix| -> Result<DataMatrix> {
                    match (gradient_mode, source) {
                        (true, Some(NoiseSource::Relative { beta })) => privacy::perturb_gradient(&g, beta, noise_seed),
                        (true, Some(NoiseSource::Absolute { sigma })) => {
                            privacy::perturb_gradient_abs(&g, sigma, noise_seed)
                        }
                        (true, Some(NoiseSource::Calibrated { .. })) => {
                            privacy::perturb_gradient_abs(&g, gradient_sigma[p].unwrap_or(0.0), noise_seed)
                        }
                        _ => Ok(g),
                    }
                };
                let landmarks_mode = config.aggregation == Aggregation::AverageLandmarks;
                let local = local_descent(&y, objective, config.step_size, config.local_steps, norm_ceiling, |_, g| {
                    if landmarks_mode {
                        perturb(g)
                    } else {
                        Ok(g)
                    }
                })?;
                let upload = if landmarks_mode {
                    None
                } else {
                    Some(perturb(objective.gradient(&local.landmarks)?)?)
                };
                Ok((local, upload))
            })
            .collect();
        let mut locals = Vec::with_capacity(updates.len());
        for (p, u) in updates.into_iter().enumerate() {
            locals.push(u.map_err(|e| Error::ClientAbort {
                round,
                client: shards[p].id,
                source: Box::new(e),
            })?);
        }

        if matches!(source, Some(NoiseSource::Calibrated { .. })) {
            for ((local, _), shard) in locals.iter().zip(&effective) {
                observed_upsilon = observed_upsilon.max(max_landmark_distance(&shard.data, &local.landmarks));
            }
        }

        // averaged virtual iterates Ȳ^{s,t} = Σ ω_p Y_p^{s,t}
        let mut prev = y.as_matrix().clone();
        for t in 0..config.local_steps {
            let iter_refs: Vec<&DataMatrix> = locals.iter().map(|(l, _)| &l.iterates[t]).collect();
            let avg = weighted_sum(&iter_refs, &weights)?;
            let disp = crate::linalg::frobenius_sq(&(&avg - &prev));
            let objective = if config.trace_objective {
                Some(global_objective(&DataMatrix::from_matrix_unchecked(avg.clone()))?)
            } else {
                None
            };
            trace.entries.push(TraceEntry {
                round,
                local_step: t + 1,
                objective,
                displacement_sq: disp,
                elapsed_ms: 0.0,
            });
            prev = avg;
        }

        let contributions: Vec<DataMatrix> = match config.aggregation {
            Aggregation::AverageLandmarks => locals.into_iter().map(|(l, _)| l.landmarks).collect(),
            Aggregation::AverageGradients => locals
                .into_iter()
                .map(|(_, g)| g.expect("gradient upload present in gradient mode"))
                .collect(),
        };
        y = aggregate(&contributions, config.aggregation, &weights, &y, config.server_step_size)
            .map_err(|e| Error::Numerical(format!("aggregation in round {round}: {e}")))?;

        if privacy.mode == PrivacyMode::VariablePerturb {
            let seed = rng::mix(privacy.seed, &[purpose::VARIABLE_NOISE, SERVER, round as u64]);
            let sigma = match source {
                Some(NoiseSource::Absolute { sigma }) => sigma,
                Some(NoiseSource::Relative { beta }) => beta * privacy::population_std(y.as_matrix().as_slice()),
                _ => 0.0,
            };
            y = privacy::perturb_variable(&y, sigma, seed)?;
        }
        if y.frobenius_norm() > norm_ceiling {
            return Err(Error::Numerical(format!(
                "landmark norm exceeded 1e6 x its initial value in round {round}; step size too large"
            )));
        }

        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        let n = trace.entries.len();
        for e in &mut trace.entries[n - config.local_steps..] {
            e.elapsed_ms = elapsed;
        }
    }
    if matches!(source, Some(NoiseSource::Calibrated { .. })) {
        resolved.observed_upsilon = Some(observed_upsilon);
    }

    Ok(FedOutcome {
        landmarks: y,
        initial_landmarks: y0,
        trace,
        client_data: effective.into_iter().map(|s| s.data).collect(),
        privacy: resolved,
    })
}
