//! Service configuration, read from TOML.
//!
//! Every field has a default, so an empty file is valid. `MEMDB_DATA_DIR`
//! overrides `data_dir` after the file is read; command-line flags override
//! both.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use memdb_core::storage::log::StorageConfig;
use memdb_core::{Embedder, Engine, EngineConfig, HashEmbedder, IvfParams, MaintenancePlan, Namespace};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DATA_DIR_ENV: &str = "MEMDB_DATA_DIR";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub listen: SocketAddr,
    pub storage: StorageConfig,
    pub ivf: IvfParams,
    pub build_ivf_on_compact: bool,
    pub maintenance: MaintenanceConfig,
    pub embedders: EmbedderConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: PathBuf::from("memdb-data"),
            listen: DEFAULT_LISTEN.parse().expect("valid default address"),
            storage: StorageConfig::default(),
            ivf: IvfParams::default(),
            build_ivf_on_compact: true,
            maintenance: MaintenanceConfig::default(),
            embedders: EmbedderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaintenanceConfig {
    pub enabled: bool,
    #[serde(flatten)]
    pub plan: MaintenancePlan,
}

impl Default for MaintenanceConfig {
    fn default() -> Self {
        MaintenanceConfig {
            enabled: true,
            plan: MaintenancePlan::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderSpec {
    /// The built-in deterministic token-hashing embedder.
    Hash {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_dimension() -> usize {
    memdb_core::model::DEFAULT_HIGH_DIM
}

impl EmbedderSpec {
    pub fn build(&self) -> Result<Arc<dyn Embedder>, ServiceError> {
        match *self {
            EmbedderSpec::Hash { dimension: 0, .. } => {
                Err(ServiceError::Config("embedder dimension must be positive".into()))
            }
            EmbedderSpec::Hash { dimension, seed } => Ok(Arc::new(HashEmbedder::new(dimension, seed))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    /// Used by namespaces without their own entry. `None` disables text
    /// embedding for them.
    pub default: Option<EmbedderSpec>,
    pub namespaces: BTreeMap<String, EmbedderSpec>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            default: Some(EmbedderSpec::Hash {
                dimension: default_dimension(),
                seed: 0,
            }),
            namespaces: BTreeMap::new(),
        }
    }
}

impl ServiceConfig {
    /// Reads `path` if given, then applies the environment override.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ServiceError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)?
            }
            None => ServiceConfig::default(),
        };
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.data_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        let cfg: ServiceConfig = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.maintenance.plan.validate()?;
        Ok(cfg)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            data_dir: self.data_dir.clone(),
            storage: self.storage.clone(),
            ivf: self.ivf,
            build_ivf_on_compact: self.build_ivf_on_compact,
        }
    }

    /// Registers the configured embedders with `engine`.
    pub fn install_embedders(&self, engine: &Engine) -> Result<(), ServiceError> {
        if let Some(spec) = &self.embedders.default {
            engine.embedders().set_default(spec.build()?);
        }
        for (name, spec) in &self.embedders.namespaces {
            let ns = Namespace::new(name.as_str()).map_err(|e| ServiceError::Config(e.to_string()))?;
            engine.embedders().register(ns, spec.build()?);
        }
        Ok(())
    }

    /// Opens the engine described by this configuration.
    pub fn open_engine(&self) -> Result<Engine, ServiceError> {
        let engine = Engine::open(self.engine_config())?;
        self.install_embedders(&engine)?;
        Ok(engine)
    }
}
