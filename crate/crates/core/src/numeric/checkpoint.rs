//! TCDST1 checkpoint container: the magic line `TCDST1` followed by a JSON
//! document holding named parameters, optimizer state, the RNG seed, and
//! free-form model metadata.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{AdamState, ParamStore, Precision, Real, Tensor};

pub const MAGIC: &str = "TCDST1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub precision: Precision,
    pub seed: u64,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_params<F: Real>(
        params: &ParamStore<F>,
        optimizer: Option<&AdamState>,
        seed: u64,
        metadata: serde_json::Value,
    ) -> Self {
        Checkpoint {
            precision: F::PRECISION,
            seed,
            params: params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.to_f64_vec(),
                })
                .collect(),
            optimizer: optimizer.cloned(),
            metadata,
        }
    }

    pub fn to_params<F: Real>(&self) -> Result<ParamStore<F>> {
        let mut store = ParamStore::new();
        for p in &self.params {
            let values = p.values.iter().map(|&v| F::from_f64_lossy(v)).collect();
            let tensor = Tensor::new(p.shape.clone(), values)
                .map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", p.name)))?;
            store
                .insert(p.name.clone(), tensor)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self> {
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        if magic.trim_end() != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {MAGIC:?}",
                magic.trim_end()
            )));
        }
        serde_json::from_reader(r).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}
