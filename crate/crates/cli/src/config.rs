//! Run configuration: a JSON manifest with one optional section per
//! component; command-line flags override individual fields. Unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use carrec_core::baselines::PointwiseConfig;
use carrec_core::data::SyntheticConfig;
use carrec_core::error::{Error, Result};
use carrec_core::eval::EvalProtocol;
use carrec_core::nbo::{ContractsSyntheticConfig, NboConfig};
use carrec_core::sasrec::SasrecConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synthetic: Option<SyntheticConfig>,
    pub contracts: Option<ContractsSyntheticConfig>,
    pub sasrec: Option<SasrecConfig>,
    pub pointwise: Option<PointwiseConfig>,
    pub nbo: Option<NboConfig>,
    pub protocol: Option<EvalProtocol>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line() as u64,
            detail: e.to_string(),
        })
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        self.synthetic.clone().unwrap_or_default()
    }

    pub fn contracts(&self) -> ContractsSyntheticConfig {
        self.contracts.clone().unwrap_or_default()
    }

    pub fn sasrec(&self) -> SasrecConfig {
        self.sasrec.clone().unwrap_or_default()
    }

    pub fn pointwise(&self) -> PointwiseConfig {
        self.pointwise.clone().unwrap_or_default()
    }

    pub fn nbo(&self) -> NboConfig {
        self.nbo.clone().unwrap_or_default()
    }

    pub fn protocol(&self) -> EvalProtocol {
        self.protocol.clone().unwrap_or_default()
    }
}
