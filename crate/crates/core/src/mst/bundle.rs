//! Model bundle directory: `manifest.json`, one `s<stage>_m<index>.bin`
//! blob of little-endian f64 parameters per MLP, plus optional `som.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::MstModel;
use crate::ann::{Activation, Mlp};
use crate::dataprep::NormStats;
use crate::error::{Error, Result};
use crate::frontend::FrontEnd;

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpEntry {
    pub file: String,
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub model: MstModel,
    pub config_hash: String,
    pub stages: Vec<Vec<MlpEntry>>,
    pub norm: Option<NormStats>,
    pub frontend: Option<String>,
    /// Free-form metrics recorded by the trainer.
    #[serde(default)]
    pub metrics: serde_json::Value,
}

pub fn write_model(
    dir: &Path,
    model: &MstModel,
    norm: Option<NormStats>,
    frontend: Option<&FrontEnd>,
    metrics: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut stages = Vec::new();
    for (s, mlps) in model.stages.iter().enumerate() {
        let mut entries = Vec::new();
        for (i, m) in mlps.iter().enumerate() {
            let file = format!("s{}_m{}.bin", s + 1, i);
            let bytes: Vec<u8> = m.params().iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(&file), bytes)?;
            entries.push(MlpEntry {
                file,
                sizes: m.sizes(),
                hidden: m.hidden,
                output: m.output,
            });
        }
        stages.push(entries);
    }
    let fe_file = match frontend {
        Some(fe) => {
            fs::write(dir.join("som.json"), serde_json::to_string_pretty(fe)?)?;
            Some("som.json".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        version: BUNDLE_VERSION,
        model: model.clone(),
        config_hash: model.config_hash(),
        stages,
        norm,
        frontend: fe_file,
        metrics,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub struct LoadedModel {
    pub model: MstModel,
    pub norm: Option<NormStats>,
    pub frontend: Option<FrontEnd>,
    pub manifest: Manifest,
}

pub fn read_model(dir: &Path) -> Result<LoadedModel> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != BUNDLE_VERSION {
        return Err(Error::Format(format!("unsupported bundle version {}", manifest.version)));
    }
    let mut model = manifest.model.clone();
    model.stages = manifest
        .stages
        .iter()
        .map(|entries| {
            entries
                .iter()
                .map(|e| {
                    let bytes = fs::read(dir.join(&e.file))?;
                    if bytes.len() % 8 != 0 {
                        return Err(Error::Format(format!("{} is not a whole number of f64", e.file)));
                    }
                    let p: Vec<f64> = bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    let mut m = Mlp::zeros(&e.sizes, e.hidden, e.output)?;
                    m.set_params(&p).map_err(|_| Error::Format(format!("{} has the wrong length", e.file)))?;
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let frontend = match &manifest.frontend {
        Some(f) => Some(serde_json::from_str(&fs::read_to_string(dir.join(f))?)?),
        None => None,
    };
    Ok(LoadedModel {
        model,
        norm: manifest.norm,
        frontend,
        manifest,
    })
}
