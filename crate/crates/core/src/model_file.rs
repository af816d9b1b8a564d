//! Self-describing JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nnet::{Layer, Mlp, MlpSpec};
use crate::structures::{IoModel, Lags, Model, Scaler, SsConfig, StateSpaceModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StructureRecord {
    StateSpace { config: SsConfig },
    Io { n_a: usize, n_b: usize, n_y: usize, n_u: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub name: String,
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

impl NetworkRecord {
    fn new(name: &str, net: &Mlp) -> Self {
        NetworkRecord {
            name: name.to_string(),
            spec: net.spec().clone(),
            layers: net.layers().to_vec(),
        }
    }

    fn into_mlp(self) -> Result<Mlp> {
        Mlp::from_layers(self.spec, self.layers)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the resolved run configuration.
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    pub iterations: usize,
    pub final_total: Option<f64>,
    pub final_fit: Option<f64>,
    pub final_consistency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub structure: StructureRecord,
    pub scaler: Scaler,
    pub networks: Vec<NetworkRecord>,
    pub provenance: Provenance,
}

/// Hex SHA-256 over `key=value` lines in the given order.
pub fn config_hash<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut h = Sha256::new();
    for (k, v) in entries {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

impl ModelFile {
    pub fn from_model(model: &Model, provenance: Provenance) -> Self {
        let (structure, networks) = match model {
            Model::StateSpace(m) => {
                let mut nets: Vec<NetworkRecord> = m
                    .state_nets()
                    .iter()
                    .enumerate()
                    .map(|(i, n)| NetworkRecord::new(&format!("state.{i}"), n))
                    .collect();
                if let Some(n) = m.output_net() {
                    nets.push(NetworkRecord::new("output", n));
                }
                (
                    StructureRecord::StateSpace {
                        config: m.config().clone(),
                    },
                    nets,
                )
            }
            Model::Io(m) => (
                StructureRecord::Io {
                    n_a: m.lags().outputs,
                    n_b: m.lags().inputs,
                    n_y: m.n_y(),
                    n_u: m.n_u(),
                },
                vec![NetworkRecord::new("io", m.net())],
            ),
        };
        ModelFile {
            format_version: FORMAT_VERSION,
            structure,
            scaler: model.scaler().clone(),
            networks,
            provenance,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut nets = self.networks;
        match self.structure {
            StructureRecord::StateSpace { config } => {
                let output = match nets.last() {
                    Some(n) if n.name == "output" => nets.pop().map(NetworkRecord::into_mlp).transpose()?,
                    _ => None,
                };
                let state = nets.into_iter().map(NetworkRecord::into_mlp).collect::<Result<Vec<_>>>()?;
                Ok(StateSpaceModel::from_parts(config, state, output, self.scaler)?.into())
            }
            StructureRecord::Io { n_a, n_b, n_y, n_u } => {
                if nets.len() != 1 {
                    return Err(Error::InvalidArgument(format!("IO model needs one network, found {}", nets.len())));
                }
                let net = nets.pop().unwrap().into_mlp()?;
                Ok(IoModel::from_parts(Lags::new(n_a, n_b), n_y, n_u, net, self.scaler)?.into())
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a model file, checking the format version before the body.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
