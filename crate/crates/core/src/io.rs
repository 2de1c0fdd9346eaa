//! On-disk formats: chain configs, demonstration datasets (JSON Lines),
//! model files, ensemble manifests and weight vectors.
//!
//! Floats are written in shortest round-trip form, so every format reads
//! back to the identical values and rewrites to the identical bytes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::composition::{CompositionWeights, PolicyEnsemble};
use crate::diffusion::DenoiserModel;
use crate::error::{Error, Result};
use crate::kinematics::{Demo, DemoSet, JointConfig, KinematicChain, Trajectory};

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    pub obs: Vec<f64>,
    pub traj: Vec<Vec<f64>>,
    pub dt: f64,
}

impl DemoRecord {
    pub fn from_demo(d: &Demo) -> Self {
        Self {
            obs: d.obs.0.clone(),
            traj: d.traj.steps().map(<[f64]>::to_vec).collect(),
            dt: d.traj.dt(),
        }
    }

    pub fn into_demo(self) -> Result<Demo> {
        let steps: Vec<JointConfig> = self.traj.into_iter().map(JointConfig).collect();
        let traj = Trajectory::from_steps(&steps, self.dt)?;
        if self.obs.len() != traj.dof() {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: traj.dof(),
                got: self.obs.len(),
            });
        }
        Ok(Demo { obs: JointConfig(self.obs), traj })
    }
}

/// Entry of an ensemble manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub models: Vec<ManifestEntry>,
}

fn parse_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Write through a sibling temporary file so readers never see a partial file.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| parse_error(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_chain(path: &Path) -> Result<KinematicChain> {
    read_json(path)
}

pub fn write_chain(path: &Path, chain: &KinematicChain) -> Result<()> {
    write_json(path, chain)
}

/// Serialise a dataset as JSON Lines.
pub fn dataset_to_string(demos: &[Demo]) -> Result<String> {
    let mut out = String::new();
    for d in demos {
        out.push_str(&serde_json::to_string(&DemoRecord::from_demo(d))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, demos: &DemoSet) -> Result<()> {
    write_bytes(path, dataset_to_string(demos.demos())?.as_bytes())
}

/// Trajectories without a recorded observation use their first step.
pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let demos: Vec<Demo> = trajs
        .iter()
        .map(|t| Demo { obs: JointConfig(t.step(0).to_vec()), traj: t.clone() })
        .collect();
    write_bytes(path, dataset_to_string(&demos)?.as_bytes())
}

/// Read a JSON Lines dataset; blank lines are skipped and errors name the line.
pub fn read_dataset(path: &Path) -> Result<DemoSet> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut demos = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DemoRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let demo = record.into_demo().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        demos.push(demo);
    }
    if demos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    DemoSet::new(demos).map_err(|e| Error::Parse { path: path.to_path_buf(), line: 0, message: e.to_string() })
}

pub fn read_model(path: &Path) -> Result<DenoiserModel> {
    let mut model: DenoiserModel = read_json(path)?;
    model.validate().map_err(|e| Error::Parse { path: path.to_path_buf(), line: 0, message: e.to_string() })?;
    Ok(model)
}

/// Model files are compact JSON: the parameter vector dominates their size.
pub fn write_model(path: &Path, model: &DenoiserModel) -> Result<()> {
    let file_bytes = {
        let mut buf = BufWriter::new(Vec::new());
        serde_json::to_writer(&mut buf, model)?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        buf.into_inner().map_err(|e| Error::io(path, e.into_error()))?
    };
    write_bytes(path, &file_bytes)
}

pub fn read_manifest(path: &Path) -> Result<EnsembleManifest> {
    read_json(path)
}

/// Load every model listed in a manifest.
pub fn read_ensemble(path: &Path) -> Result<PolicyEnsemble> {
    let manifest = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut models = Vec::with_capacity(manifest.models.len());
    let mut labels = Vec::with_capacity(manifest.models.len());
    for entry in manifest.models {
        models.push(read_model(&dir.join(&entry.path))?);
        labels.push(entry.label);
    }
    PolicyEnsemble::new(models, labels)
}

pub fn read_weights(path: &Path) -> Result<CompositionWeights> {
    read_json(path)
}

pub fn write_weights(path: &Path, weights: &CompositionWeights) -> Result<()> {
    write_json(path, weights)
}

/// Comma-separated weights such as `0.5,0.5`.
pub fn parse_weights(s: &str) -> Result<CompositionWeights> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Error::invalid(format!("weight {v:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    CompositionWeights::new(values)
}
