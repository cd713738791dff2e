use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::DatasetSpec;
use super::partition::PartitionSpec;
use crate::embed::{TsneConfig, UmapConfig};
use crate::error::{Error, Result};
use crate::feddl::{Aggregation, FedConfig, InitMode, ResolvedPrivacy};
use crate::nystrom::{CompletionParams, Provenance};
use crate::privacy::PrivacySpec;
use crate::rng;

/// Per-stage seeds. Missing entries are derived from the run seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub dataset: Option<u64>,
    pub partition: Option<u64>,
    pub landmarks: Option<u64>,
    pub privacy: Option<u64>,
    pub embed: Option<u64>,
    pub eval: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedSection {
    pub rounds: usize,
    pub local_steps: usize,
    /// `None` picks `n_y / (4γQ²)`.
    pub step_size: Option<f64>,
    /// `None` uses the resolved `step_size`.
    pub server_step_size: Option<f64>,
    pub aggregation: Aggregation,
    pub n_landmarks: usize,
    pub init: InitMode,
    pub trace_objective: bool,
}

impl Default for FedSection {
    fn default() -> Self {
        Self {
            rounds: 50,
            local_steps: 3,
            step_size: None,
            server_step_size: None,
            aggregation: Aggregation::AverageLandmarks,
            n_landmarks: 200,
            init: InitMode::SeedSample,
            trace_objective: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    /// `None` applies the median heuristic to the initial landmarks.
    pub gamma: Option<f64>,
    pub median_sample: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            gamma: None,
            median_sample: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeclustSection {
    /// `None` uses the number of classes in the data.
    pub clusters: Option<usize>,
    /// `None` reuses the landmark kernel's γ.
    pub gamma: Option<f64>,
    pub completion: CompletionParams,
}

impl Default for SpeclustSection {
    fn default() -> Self {
        Self {
            clusters: None,
            gamma: None,
            completion: CompletionParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    /// Neighbourhood preservation against exact high-dimensional distances.
    pub npa: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![5, 10, 20],
            npa: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub svg: bool,
    pub landmarks: bool,
    /// The completed `n_x × n_x` matrix; large for big runs.
    pub completed_matrix: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            svg: true,
            landmarks: true,
            completed_matrix: false,
        }
    }
}

/// Everything a run needs. Loaded from TOML; all fields have defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Run the method on exact distances or kernels of the pooled data.
    pub centralized: bool,
    pub seeds: Seeds,
    pub dataset: DatasetSpec,
    pub partition: PartitionSpec,
    pub fed: FedSection,
    pub kernel: KernelSection,
    pub privacy: PrivacySpec,
    pub completion: CompletionParams,
    pub tsne: TsneConfig,
    pub umap: UmapConfig,
    pub speclust: SpeclustSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            centralized: false,
            seeds: Seeds::default(),
            dataset: DatasetSpec::default(),
            partition: PartitionSpec::default(),
            fed: FedSection::default(),
            kernel: KernelSection::default(),
            privacy: PrivacySpec::default(),
            completion: CompletionParams::default(),
            tsne: TsneConfig::default(),
            umap: UmapConfig::default(),
            speclust: SpeclustSection::default(),
            eval: EvalSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// TOML integers are signed 64-bit, so derived seeds stay below 2⁶³.
fn derive(seed: u64, tag: u64) -> u64 {
    rng::mix(seed, &[0x5eed, tag]) >> 1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fills every missing stage seed and copies it into the stage configs.
    pub fn with_resolved_seeds(&self) -> Self {
        let mut c = self.clone();
        let s = &mut c.seeds;
        let base = self.seed;
        s.dataset.get_or_insert(derive(base, 1));
        s.partition.get_or_insert(derive(base, 2));
        s.landmarks.get_or_insert(derive(base, 3));
        s.privacy.get_or_insert(derive(base, 4));
        s.embed.get_or_insert(derive(base, 5));
        s.eval.get_or_insert(derive(base, 6));
        let embed = s.embed.unwrap_or_default();
        c.privacy.seed = s.privacy.unwrap_or_default();
        c.tsne.seed = embed;
        c.umap.seed = embed;
        c
    }

    pub fn fed_config(&self, step_size: f64, server_step_size: f64) -> FedConfig {
        FedConfig {
            rounds: self.fed.rounds,
            local_steps: self.fed.local_steps,
            step_size,
            server_step_size,
            aggregation: self.fed.aggregation,
            n_landmarks: self.fed.n_landmarks,
            init: self.fed.init,
            seed: self.seeds.landmarks.unwrap_or_else(|| derive(self.seed, 3)),
            trace_objective: self.fed.trace_objective,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    FeddlFit,
    Tsne,
    Umap,
    Speclust,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::FeddlFit => "feddl_fit",
            Command::Tsne => "tsne",
            Command::Umap => "umap",
            Command::Speclust => "speclust",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientInfo {
    pub id: usize,
    pub points: usize,
    pub weight: f64,
}

/// Values chosen at run time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub points: usize,
    pub features: usize,
    pub classes: usize,
    pub clients: Vec<ClientInfo>,
    pub gamma: Option<f64>,
    pub step_size: Option<f64>,
    pub server_step_size: Option<f64>,
    pub final_objective: Option<f64>,
    pub privacy: Option<ResolvedPrivacy>,
    pub completion: Option<Provenance>,
    pub clusters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub name: String,
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    /// False for files carrying wall-clock measurements.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: Command,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub threads: usize,
    pub resolved: Resolved,
    pub outputs: Vec<OutputRecord>,
    /// The fully resolved configuration; rerunning it reproduces the outputs.
    pub config: RunConfig,
}

impl RunManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
