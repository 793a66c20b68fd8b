//! Node configuration files (TOML).
//!
//! ```toml
//! name = "server"
//! listen = "127.0.0.1:7400"
//! types = ["Ship", "Asteroid"]
//! resolver = "keep_theirs"
//! gc = true
//!
//! [remotes]
//! hub = "got://10.0.0.2:7400"
//!
//! [schema]
//! Ship = ["x", "y", "velocity"]
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::dataframe::{Dataframe, DataframeConfig};
use crate::error::{Error, Result};
use crate::merge::{default_resolver, Strategy};
use crate::object::{TypeDescriptor, TypeRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub name: String,
    /// `host:port` to serve on.
    #[serde(default)]
    pub listen: Option<String>,
    /// Node id when run inside the simulator.
    #[serde(default)]
    pub sim_id: Option<u32>,
    #[serde(default)]
    pub remotes: BTreeMap<String, String>,
    /// Subscribed types; absent means every registered type.
    #[serde(default)]
    pub types: Option<Vec<String>>,
    #[serde(default = "default_strategy")]
    pub resolver: String,
    #[serde(default = "default_true")]
    pub gc: bool,
    #[serde(default)]
    pub auto_resync: bool,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Type name to dimension list. Empty means the caller supplies a
    /// registry.
    #[serde(default)]
    pub schema: BTreeMap<String, Vec<String>>,
}

fn default_strategy() -> String {
    "keep_mine".into()
}

fn default_true() -> bool {
    true
}

impl NodeConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: NodeConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.strategy()?;
        if cfg.name.is_empty() {
            return Err(Error::Config("node name is empty".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn strategy(&self) -> Result<Strategy> {
        self.resolver
            .parse()
            .map_err(|_| Error::Config(format!("unknown resolver `{}`", self.resolver)))
    }

    /// The registry described by `[schema]`.
    pub fn registry(&self) -> Result<TypeRegistry> {
        let mut reg = TypeRegistry::new();
        for (name, dims) in &self.schema {
            reg.register(TypeDescriptor::new(name.clone(), dims.iter().cloned())?)?;
        }
        Ok(reg)
    }

    pub fn dataframe_config(&self) -> Result<DataframeConfig> {
        Ok(DataframeConfig {
            resolver: Arc::new(default_resolver(self.strategy()?)),
            gc: self.gc,
            auto_resync: self.auto_resync,
            seed: self.seed,
        })
    }

    /// Builds the dataframe with its remotes and subscriptions applied.
    pub fn build(&self, registry: Arc<TypeRegistry>) -> Result<Dataframe> {
        let mut df = Dataframe::new(self.name.clone(), registry, self.dataframe_config()?);
        if let Some(types) = &self.types {
            df.subscribe_types(types)?;
        }
        for (name, addr) in &self.remotes {
            df.add_remote(name.clone(), addr.clone());
        }
        Ok(df)
    }
}
