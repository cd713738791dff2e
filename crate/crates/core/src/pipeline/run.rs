use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use super::config::{ClientInfo, Command, OutputRecord, Resolved, RunConfig, RunManifest};
use super::data::{load_dataset, Dataset};
use super::fdlm;
use super::partition::partition;
use super::svg::render_scatter_svg;
use crate::cluster::{ari, evaluate, nmi, spectral_cluster, ClusterAssignment, MetricsReport, MetricsSummary};
use crate::embed::{self, Embedding};
use crate::error::{Error, Result};
use crate::feddl::{init_landmarks, prepare_shards, run_feddl_from, ClientShard, FedOutcome, ShardSummary};
use crate::kernel::{gaussian_kernel, kernel_between, pairwise_sq_dist, self_sq_dist, KernelParams};
use crate::nystrom::{assemble_cross_block, nystrom_complete, CompletedMatrix, CompletionParams, LandmarkBlock, MatrixKind};

/// Where inputs come from and outputs go. Without `out_dir` nothing is
/// written, but the manifest still lists every output with its digest.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub data_dir: PathBuf,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: Dataset,
    pub shards: Vec<ClientShard>,
}

/// Landmarks plus the step sizes and bandwidth actually used.
#[derive(Debug, Clone)]
pub struct LandmarkRun {
    pub outcome: FedOutcome,
    pub gamma: f64,
    pub step_size: f64,
    pub server_step_size: f64,
}

#[derive(Debug, Clone)]
pub struct EmbedRun {
    pub embedding: Embedding,
    /// Class of every embedded row.
    pub labels: Vec<usize>,
    pub metrics: MetricsReport,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub assignment: ClusterAssignment,
    /// Dataset column index of every assigned row.
    pub point_ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub metrics: MetricsReport,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone)]
pub struct FitRun {
    pub landmarks: LandmarkRun,
    pub manifest: RunManifest,
}

/// Loads the dataset and splits it across clients.
pub fn prepare(config: &RunConfig, data_dir: &Path) -> Result<Prepared> {
    let seeds = &config.seeds;
    let data = load_dataset(&config.dataset, data_dir, seeds.dataset.unwrap_or(config.seed))
        .map_err(|e| e.in_stage("load"))?;
    let shards = partition(&data, &config.partition, seeds.partition.unwrap_or(config.seed))
        .map_err(|e| e.in_stage("partition"))?;
    Ok(Prepared { data, shards })
}

/// Runs FedDL, resolving γ by the median heuristic on `Y⁰` and the step
/// size as `n_y / (4γQ²)` when the config leaves them open.
pub fn learn_landmarks(shards: &[ClientShard], config: &RunConfig) -> Result<LandmarkRun> {
    let dim = shards
        .first()
        .ok_or_else(|| Error::InvalidArgument("no client shards".into()))?
        .data
        .dim();
    let probe = config.fed_config(0.0, 0.0);
    let effective = prepare_shards(shards, &config.privacy)?;
    let summaries: Vec<ShardSummary> = effective.iter().map(ClientShard::summary).collect();
    let y0 = init_landmarks(dim, &summaries, &probe)?;
    let gamma = match config.kernel.gamma {
        Some(g) => g,
        None => KernelParams::median_heuristic(&y0, config.kernel.median_sample, probe.seed)?.gamma,
    };
    let params = KernelParams::new(gamma)?;
    let (step_size, server_step_size) = resolve_steps(config, gamma);
    let fed = config.fed_config(step_size, server_step_size);
    let outcome = run_feddl_from(shards, y0, &fed, params, &config.privacy)?;
    Ok(LandmarkRun {
        outcome,
        gamma,
        step_size,
        server_step_size,
    })
}

fn resolve_steps(config: &RunConfig, gamma: f64) -> (f64, f64) {
    let auto = if gamma > 0.0 {
        let q = config.fed.local_steps.max(1) as f64;
        config.fed.n_landmarks as f64 / (4.0 * gamma * q * q)
    } else {
        1.0
    };
    let eta = config.fed.step_size.unwrap_or(auto);
    (eta, config.fed.server_step_size.unwrap_or(eta))
}

/// Every client uploads its block against the landmarks; the server
/// assembles and completes. Returns the completion and the dataset column
/// index of every completed row.
pub fn upload_and_complete(
    shards: &[ClientShard],
    outcome: &FedOutcome,
    kind: MatrixKind,
    params: KernelParams,
    completion: &CompletionParams,
    privacy_mode: crate::privacy::PrivacyMode,
) -> Result<(CompletedMatrix, Vec<usize>)> {
    let y = &outcome.landmarks;
    let blocks: Vec<(usize, DMatrix<f64>)> = shards
        .iter()
        .zip(&outcome.client_data)
        .map(|(s, x)| {
            let block = match kind {
                MatrixKind::Distance => pairwise_sq_dist(x, y),
                MatrixKind::Kernel => kernel_between(x, y, params),
            };
            block.map(|b| (s.id, b))
        })
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("upload"))?;
    let cross = assemble_cross_block(&blocks).map_err(|e| e.in_stage("assemble"))?;
    let w = LandmarkBlock::from_landmarks(y, kind, params).map_err(|e| e.in_stage("complete"))?;
    let completed = nystrom_complete(&cross, &w, completion, privacy_mode).map_err(|e| e.in_stage("complete"))?;
    let mut ids = Vec::with_capacity(cross.rows());
    for r in cross.ranges() {
        let shard = shards
            .iter()
            .find(|s| s.id == r.client)
            .expect("assembled client comes from the shard list");
        ids.extend_from_slice(&shard.point_ids);
    }
    Ok((completed, ids))
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Output files rendered in memory, then optionally written.
struct Outputs {
    files: Vec<(String, Vec<u8>, bool)>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes, true));
    }

    fn add_timed(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes, false));
    }

    fn add_matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        let mut buf = Vec::new();
        fdlm::write_fdlm(m, &mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    fn finish(self, out_dir: Option<&Path>, mut manifest: RunManifest) -> Result<RunManifest> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        for (name, bytes, deterministic) in self.files {
            if let Some(dir) = out_dir {
                std::fs::write(dir.join(&name), &bytes)?;
            }
            manifest.outputs.push(OutputRecord {
                sha256: hex(&Sha256::digest(&bytes)),
                path: name.clone(),
                name,
                deterministic,
            });
        }
        manifest.finished_unix_ms = unix_ms();
        if let Some(dir) = out_dir {
            std::fs::write(dir.join("manifest.toml"), manifest.to_toml()?)?;
        }
        Ok(manifest)
    }
}

fn base_manifest(command: Command, config: &RunConfig, data: &Dataset, started: u64) -> RunManifest {
    let classes: BTreeSet<usize> = data.labels.iter().copied().collect();
    RunManifest {
        version: crate::VERSION.to_string(),
        command,
        started_unix_ms: started,
        finished_unix_ms: started,
        threads: rayon::current_num_threads(),
        resolved: Resolved {
            points: data.x.len(),
            features: data.x.dim(),
            classes: classes.len(),
            ..Resolved::default()
        },
        outputs: Vec::new(),
        config: config.clone(),
    }
}

fn record_landmarks(manifest: &mut RunManifest, shards: &[ClientShard], run: &LandmarkRun) {
    let r = &mut manifest.resolved;
    r.clients = shards
        .iter()
        .map(|s| ClientInfo {
            id: s.id,
            points: s.data.len(),
            weight: s.weight,
        })
        .collect();
    r.gamma = Some(run.gamma);
    r.step_size = Some(run.step_size);
    r.server_step_size = Some(run.server_step_size);
    r.final_objective = run.outcome.trace.final_objective();
    r.privacy = Some(run.outcome.privacy.clone());
    let c = &mut manifest.config;
    c.kernel.gamma = Some(run.gamma);
    c.fed.step_size = Some(run.step_size);
    c.fed.server_step_size = Some(run.server_step_size);
}

fn landmark_outputs(out: &mut Outputs, config: &RunConfig, run: &LandmarkRun) -> Result<()> {
    if config.output.landmarks {
        out.add_matrix("landmarks.fdlm", run.outcome.landmarks.as_matrix())?;
    }
    let mut trace = Vec::new();
    run.outcome.trace.write_csv(&mut trace)?;
    out.add_timed("trace.csv", trace);
    Ok(())
}

/// FedDL only: landmarks and round trace.
pub fn run_feddl_fit(config: &RunConfig, ctx: &RunContext) -> Result<FitRun> {
    let started = unix_ms();
    let config = config.with_resolved_seeds();
    let prepared = prepare(&config, &ctx.data_dir)?;
    let run = learn_landmarks(&prepared.shards, &config).map_err(|e| e.in_stage("feddl"))?;
    let mut manifest = base_manifest(Command::FeddlFit, &config, &prepared.data, started);
    record_landmarks(&mut manifest, &prepared.shards, &run);
    let mut out = Outputs::new();
    landmark_outputs(&mut out, &config, &run).map_err(|e| e.in_stage("output"))?;
    let manifest = out.finish(ctx.out_dir.as_deref(), manifest).map_err(|e| e.in_stage("output"))?;
    Ok(FitRun { landmarks: run, manifest })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Tsne,
    Umap,
}

fn embed_with(engine: Engine, d2: &DMatrix<f64>, ids: &[usize], config: &RunConfig) -> Result<Embedding> {
    let (e, _) = match engine {
        Engine::Tsne => embed::tsne(d2, ids, &config.tsne)?,
        Engine::Umap => embed::umap(d2, ids, &config.umap)?,
    };
    Ok(e)
}

fn exact_sq_dist(data: &Dataset, ids: &[usize]) -> Result<DMatrix<f64>> {
    Ok(self_sq_dist(&data.x.select_points(ids)?))
}

/// Fed-tSNE / Fed-UMAP, or the centralized method when `config.centralized`.
pub fn run_embedding(engine: Engine, config: &RunConfig, ctx: &RunContext) -> Result<EmbedRun> {
    let started = unix_ms();
    let config = config.with_resolved_seeds();
    let prepared = prepare(&config, &ctx.data_dir)?;
    let command = match engine {
        Engine::Tsne => Command::Tsne,
        Engine::Umap => Command::Umap,
    };
    let mut manifest = base_manifest(command, &config, &prepared.data, started);
    let mut out = Outputs::new();

    let (d2, ids) = if config.centralized {
        let ids: Vec<usize> = (0..prepared.data.x.len()).collect();
        (self_sq_dist(&prepared.data.x), ids)
    } else {
        let run = learn_landmarks(&prepared.shards, &config).map_err(|e| e.in_stage("feddl"))?;
        record_landmarks(&mut manifest, &prepared.shards, &run);
        let params = KernelParams::new(run.gamma)?;
        let (completed, ids) = upload_and_complete(
            &prepared.shards,
            &run.outcome,
            MatrixKind::Distance,
            params,
            &config.completion,
            config.privacy.mode,
        )?;
        manifest.resolved.completion = Some(completed.provenance.clone());
        landmark_outputs(&mut out, &config, &run).map_err(|e| e.in_stage("output"))?;
        if config.output.completed_matrix {
            out.add_matrix("completed.fdlm", &completed.values)?;
        }
        (completed.values, ids)
    };

    let embedding = embed_with(engine, &d2, &ids, &config).map_err(|e| e.in_stage("embed"))?;
    let labels: Vec<usize> = ids.iter().map(|&j| prepared.data.labels[j]).collect();
    let d_high = if config.eval.npa {
        Some(if config.centralized { d2 } else { exact_sq_dist(&prepared.data, &ids)? })
    } else {
        None
    };
    let metrics = evaluate(
        &embedding.z,
        &labels,
        d_high.as_ref(),
        &config.eval.ks,
        config.seeds.eval.unwrap_or(config.seed),
    )
    .map_err(|e| e.in_stage("eval"))?;

    let method = method_name(command, config.centralized);
    write_embedding_outputs(&mut out, &config, &embedding, &labels, &metrics, &method).map_err(|e| e.in_stage("output"))?;
    let manifest = out.finish(ctx.out_dir.as_deref(), manifest).map_err(|e| e.in_stage("output"))?;
    Ok(EmbedRun {
        embedding,
        labels,
        metrics,
        manifest,
    })
}

fn method_name(command: Command, centralized: bool) -> String {
    let base = match command {
        Command::Tsne => "tSNE",
        Command::Umap => "UMAP",
        Command::Speclust => "SpeClust",
        Command::FeddlFit => "FedDL",
    };
    if centralized {
        base.to_string()
    } else {
        format!("Fed-{base}")
    }
}

fn write_embedding_outputs(
    out: &mut Outputs,
    config: &RunConfig,
    embedding: &Embedding,
    labels: &[usize],
    metrics: &MetricsReport,
    method: &str,
) -> Result<()> {
    let mut csv = Vec::new();
    embedding.write_csv(&mut csv, Some(labels))?;
    out.add("embedding.csv", csv);
    out.add_matrix("embedding.fdlm", &embedding.z)?;
    let mut objective = String::from("iteration,loss\n");
    for (i, v) in embedding.objective_trace.iter().enumerate() {
        objective.push_str(&format!("{i},{v:e}\n"));
    }
    out.add("objective.csv", objective.into_bytes());
    out.add("metrics.csv", metrics_csv(method, metrics)?);
    if config.output.svg {
        out.add("scatter.svg", render_scatter_svg(embedding, Some(labels))?.into_bytes());
    }
    Ok(())
}

fn metrics_csv(method: &str, metrics: &MetricsReport) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    MetricsSummary::write_csv(&[MetricsSummary::from_reports(method, std::slice::from_ref(metrics))], &mut buf)?;
    Ok(buf)
}

pub fn run_fed_tsne(config: &RunConfig, ctx: &RunContext) -> Result<EmbedRun> {
    run_embedding(Engine::Tsne, &RunConfig { centralized: false, ..config.clone() }, ctx)
}

pub fn run_fed_umap(config: &RunConfig, ctx: &RunContext) -> Result<EmbedRun> {
    run_embedding(Engine::Umap, &RunConfig { centralized: false, ..config.clone() }, ctx)
}

/// Fed-SpeClust (kernel completion, then spectral clustering), or
/// spectral clustering on the exact kernel when `config.centralized`.
pub fn run_speclust(config: &RunConfig, ctx: &RunContext) -> Result<ClusterRun> {
    let started = unix_ms();
    let config = config.with_resolved_seeds();
    let prepared = prepare(&config, &ctx.data_dir)?;
    let mut manifest = base_manifest(Command::Speclust, &config, &prepared.data, started);
    let mut out = Outputs::new();
    let c = config.speclust.clusters.unwrap_or(manifest.resolved.classes);
    manifest.resolved.clusters = Some(c);

    let (k, ids) = if config.centralized {
        let gamma = match config.speclust.gamma.or(config.kernel.gamma) {
            Some(g) => g,
            None => {
                KernelParams::median_heuristic(&prepared.data.x, config.kernel.median_sample, config.seeds.landmarks.unwrap_or(config.seed))?
                    .gamma
            }
        };
        manifest.resolved.gamma = Some(gamma);
        manifest.config.speclust.gamma = Some(gamma);
        let k = gaussian_kernel(&self_sq_dist(&prepared.data.x), KernelParams::new(gamma)?)?;
        (k, (0..prepared.data.x.len()).collect::<Vec<_>>())
    } else {
        let run = learn_landmarks(&prepared.shards, &config).map_err(|e| e.in_stage("feddl"))?;
        record_landmarks(&mut manifest, &prepared.shards, &run);
        let gamma = config.speclust.gamma.unwrap_or(run.gamma);
        manifest.config.speclust.gamma = Some(gamma);
        let (completed, ids) = upload_and_complete(
            &prepared.shards,
            &run.outcome,
            MatrixKind::Kernel,
            KernelParams::new(gamma)?,
            &config.speclust.completion,
            config.privacy.mode,
        )?;
        manifest.resolved.completion = Some(completed.provenance.clone());
        landmark_outputs(&mut out, &config, &run).map_err(|e| e.in_stage("output"))?;
        if config.output.completed_matrix {
            out.add_matrix("completed.fdlm", &completed.values)?;
        }
        (completed.values, ids)
    };

    let assignment =
        spectral_cluster(&k, c, config.seeds.embed.unwrap_or(config.seed)).map_err(|e| e.in_stage("cluster"))?;
    let labels: Vec<usize> = ids.iter().map(|&j| prepared.data.labels[j]).collect();
    let metrics = MetricsReport {
        nmi: nmi(&assignment.labels, &labels).map_err(|e| e.in_stage("eval"))?,
        ari: ari(&assignment.labels, &labels).map_err(|e| e.in_stage("eval"))?,
        ..MetricsReport::default()
    };

    let mut csv = String::from("point_id,cluster,label\n");
    for (i, &j) in ids.iter().enumerate() {
        csv.push_str(&format!("{j},{},{}\n", assignment.labels[i], labels[i]));
    }
    out.add("assignment.csv", csv.into_bytes());
    out.add(
        "metrics.csv",
        metrics_csv(&method_name(Command::Speclust, config.centralized), &metrics)?,
    );
    let manifest = out.finish(ctx.out_dir.as_deref(), manifest).map_err(|e| e.in_stage("output"))?;
    Ok(ClusterRun {
        assignment,
        point_ids: ids,
        labels,
        metrics,
        manifest,
    })
}

pub fn run_fed_speclust(config: &RunConfig, ctx: &RunContext) -> Result<ClusterRun> {
    run_speclust(&RunConfig { centralized: false, ..config.clone() }, ctx)
}

/// Outcome of rerunning a manifest.
#[derive(Debug, Clone)]
pub struct Rerun {
    pub manifest: RunManifest,
    /// Deterministic outputs whose digest differs from the original run.
    pub mismatches: Vec<String>,
}

pub fn run_command(command: Command, config: &RunConfig, ctx: &RunContext) -> Result<RunManifest> {
    Ok(match command {
        Command::FeddlFit => run_feddl_fit(config, ctx)?.manifest,
        Command::Tsne => run_embedding(Engine::Tsne, config, ctx)?.manifest,
        Command::Umap => run_embedding(Engine::Umap, config, ctx)?.manifest,
        Command::Speclust => run_speclust(config, ctx)?.manifest,
    })
}

/// Replays the manifest's resolved configuration and compares digests.
pub fn rerun_manifest(original: &RunManifest, ctx: &RunContext) -> Result<Rerun> {
    let manifest = run_command(original.command, &original.config, ctx)?;
    let mut mismatches = Vec::new();
    for old in original.outputs.iter().filter(|o| o.deterministic) {
        match manifest.outputs.iter().find(|n| n.name == old.name) {
            Some(new) if new.sha256 == old.sha256 => {}
            _ => mismatches.push(old.name.clone()),
        }
    }
    Ok(Rerun { manifest, mismatches })
}

/// Evaluates an embedding stored as CSV (`point_id, z1..zd, label`).
pub fn evaluate_embedding_csv(path: &Path, ks: &[usize], seed: u64) -> Result<MetricsReport> {
    let (embedding, labels) = read_embedding_csv(path)?;
    let labels = labels.ok_or_else(|| Error::Data(format!("{}: no label column", path.display())))?;
    evaluate(&embedding.z, &labels, None, ks, seed)
}

pub fn read_embedding_csv(path: &Path) -> Result<(Embedding, Option<Vec<usize>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let has_label = header.iter().last() == Some("label");
    let d = header.len() - 1 - usize::from(has_label);
    if header.get(0) != Some("point_id") || d == 0 {
        return Err(Error::Data(format!("{}: expected point_id,z1..zd[,label] header", path.display())));
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let bad = |col: usize| Error::Data(format!("{}: row {}, column {col} unparsable", path.display(), row + 1));
        ids.push(rec[0].parse::<usize>().map_err(|_| bad(0))?);
        for k in 1..=d {
            values.push(rec[k].parse::<f64>().map_err(|_| bad(k))?);
        }
        if has_label {
            labels.push(rec[d + 1].parse::<usize>().map_err(|_| bad(d + 1))?);
        }
    }
    let n = ids.len();
    Ok((
        Embedding {
            z: DMatrix::from_row_slice(n, d, &values),
            objective_trace: Vec::new(),
            point_ids: ids,
        },
        has_label.then_some(labels),
    ))
}
