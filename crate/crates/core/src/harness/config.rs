//! Versioned TOML run configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bounds::StepsizePolicy;
use crate::gossip::{GossipConfig, GossipStep};
use crate::objective::{LocalFunction, LocalSpec, PenalizedObjective};
use crate::real::Real;
use crate::simulator::{Problem, SimConfig};
use crate::topology::{
    laplacian_weights, load_w_csv, metropolis_weights, network_from_w, ConsensusNetwork, Graph,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `W = I - kappa L`; needs `kappa`.
    Laplacian,
    #[default]
    Metropolis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    Complete {
        n: usize,
        #[serde(default)]
        weights: WeightRule,
        kappa: Option<f64>,
    },
    Path {
        n: usize,
        #[serde(default)]
        weights: WeightRule,
        kappa: Option<f64>,
    },
    Ring {
        n: usize,
        #[serde(default)]
        weights: WeightRule,
        kappa: Option<f64>,
    },
    Star {
        n: usize,
        #[serde(default)]
        weights: WeightRule,
        kappa: Option<f64>,
    },
    /// Erdos-Renyi draw, retried until connected.
    Random {
        n: usize,
        p: f64,
        seed: u64,
        #[serde(default)]
        weights: WeightRule,
        kappa: Option<f64>,
    },
    /// Edge-list file (`n <count>` header, then `i j` lines).
    Edges {
        path: PathBuf,
        #[serde(default)]
        weights: WeightRule,
        kappa: Option<f64>,
    },
    /// Explicit consensus matrix; the graph is read from its support unless
    /// an edge list is given.
    WCsv {
        path: PathBuf,
        edges: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub alpha: f64,
    pub agents: Vec<LocalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSection {
    pub epsilon: f64,
    #[serde(default)]
    pub policy: StepsizePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    DoubleDouble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Newton,
    Gossip,
    Compare,
}

fn one() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub mode: Mode,
    pub iters: u64,
    #[serde(default = "one_usize")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub stride: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub clock: bool,
    /// `rel_err` level used for settling-time summaries.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GossipSection {
    #[serde(default)]
    pub step: GossipStep,
    pub iters: u64,
    #[serde(default = "one")]
    pub stride: u64,
}

impl Default for GossipSection {
    fn default() -> Self {
        Self {
            step: GossipStep::default(),
            iters: 50_000,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_trace")]
    pub trace: String,
    #[serde(default = "default_gossip_trace")]
    pub gossip_trace: String,
    #[serde(default = "default_aggregate")]
    pub aggregate: String,
    /// Empty disables the plot.
    #[serde(default = "default_plot")]
    pub plot: String,
    #[serde(default = "default_bounds")]
    pub bounds: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_trace() -> String {
    "newton_trace.csv".into()
}
fn default_gossip_trace() -> String {
    "gossip_trace.csv".into()
}
fn default_aggregate() -> String {
    "newton_aggregate.csv".into()
}
fn default_plot() -> String {
    "rel_err.svg".into()
}
fn default_bounds() -> String {
    "bounds.txt".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            trace: default_trace(),
            gossip_trace: default_gossip_trace(),
            aggregate: default_aggregate(),
            plot: default_plot(),
            bounds: default_bounds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub network: NetworkSpec,
    pub objective: ObjectiveSection,
    pub newton: NewtonSection,
    pub run: RunSection,
    #[serde(default)]
    pub gossip: GossipSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| HarnessError::ConfigParse(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::UnsupportedSchema(cfg.schema_version));
        }
        cfg.base_dir = base_dir.to_path_buf();
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn check(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| Err(HarnessError::Invalid(m));
        if self.run.trials == 0 {
            return invalid("run.trials must be at least 1".into());
        }
        if self.run.stride == 0 || self.gossip.stride == 0 {
            return invalid("stride must be at least 1".into());
        }
        if !(self.newton.epsilon > 0.0) {
            return invalid(format!(
                "newton.epsilon must be positive, got {}",
                self.newton.epsilon
            ));
        }
        if !(self.run.threshold > 0.0) {
            return invalid(format!(
                "run.threshold must be positive, got {}",
                self.run.threshold
            ));
        }
        for p in self.referenced_files() {
            if !p.exists() {
                return Err(HarnessError::Io {
                    path: p.display().to_string(),
                    msg: "file not found".into(),
                });
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn referenced_files(&self) -> Vec<PathBuf> {
        match &self.network {
            NetworkSpec::Edges { path, .. } => vec![self.resolve(path)],
            NetworkSpec::WCsv { path, edges } => std::iter::once(path)
                .chain(edges.iter())
                .map(|p| self.resolve(p))
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn network(&self) -> Result<ConsensusNetwork, HarnessError> {
        let weigh = |g: Graph,
                     rule: WeightRule,
                     kappa: Option<f64>|
         -> Result<ConsensusNetwork, HarnessError> {
            Ok(match rule {
                WeightRule::Metropolis => metropolis_weights(&g)?,
                WeightRule::Laplacian => {
                    let k = kappa.ok_or_else(|| {
                        HarnessError::Invalid("laplacian weights need `kappa`".into())
                    })?;
                    laplacian_weights(&g, k)?
                }
            })
        };
        match &self.network {
            NetworkSpec::Complete { n, weights, kappa } => {
                weigh(Graph::complete(*n)?, *weights, *kappa)
            }
            NetworkSpec::Path { n, weights, kappa } => weigh(Graph::path(*n)?, *weights, *kappa),
            NetworkSpec::Ring { n, weights, kappa } => weigh(Graph::ring(*n)?, *weights, *kappa),
            NetworkSpec::Star { n, weights, kappa } => weigh(Graph::star(*n)?, *weights, *kappa),
            NetworkSpec::Random {
                n,
                p,
                seed,
                weights,
                kappa,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                weigh(Graph::random_connected(*n, *p, &mut rng)?, *weights, *kappa)
            }
            NetworkSpec::Edges {
                path,
                weights,
                kappa,
            } => weigh(
                Graph::load_edge_list(&self.resolve(path))?,
                *weights,
                *kappa,
            ),
            NetworkSpec::WCsv { path, edges } => {
                let w = load_w_csv(&self.resolve(path))?;
                let graph = edges
                    .as_ref()
                    .map(|e| Graph::load_edge_list(&self.resolve(e)))
                    .transpose()?;
                Ok(network_from_w(w, graph)?)
            }
        }
    }

    pub fn locals<T: Real>(&self) -> Result<Vec<LocalFunction<T>>, HarnessError> {
        Ok(self
            .objective
            .agents
            .iter()
            .map(LocalSpec::build)
            .collect::<Result<Vec<_>, _>>()?)
    }

    pub fn objective<T: Real>(&self) -> Result<PenalizedObjective<T>, HarnessError> {
        let net = Arc::new(self.network()?);
        Ok(PenalizedObjective::new(
            net,
            self.objective.alpha,
            self.locals()?,
        )?)
    }

    pub fn problem<T: Real>(&self) -> Result<Problem<T>, HarnessError> {
        Ok(Problem::new(self.objective()?)?)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            epsilon: self.newton.epsilon,
            policy: self.newton.policy,
            iters: self.run.iters,
            seed: self.run.seed,
            stride: self.run.stride,
            clock: self.run.clock,
            mode: Default::default(),
        }
    }

    pub fn gossip_config(&self, seed: u64) -> GossipConfig {
        GossipConfig {
            step: self.gossip.step,
            iters: self.gossip.iters,
            seed,
            stride: self.gossip.stride,
        }
    }
}
