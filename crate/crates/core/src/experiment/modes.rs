//! Composition of two bimodal line policies that share the +X mode.

use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{kernel_for, train_skill_policies, PipelineConfig, ARM_START};
use crate::composition::mode_filtering_check;
use crate::diffusion::sample_many;
use crate::error::Result;
use crate::io;
use crate::kinematics::{generate_skill_dataset, KinematicChain, SkillKind, SkillSpec};
use crate::mmdfk::mmd_fk;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeFilteringResult {
    pub seed: u64,
    pub gamma: f64,
    /// MMD-FK from the composed samples to samples of each policy.
    pub vs_plus_x: f64,
    pub vs_a: f64,
    pub vs_b: f64,
}

fn policies() -> Vec<SkillSpec> {
    let line = |modes: Vec<[f64; 3]>| SkillSpec { modes, ..SkillSpec::new(SkillKind::MultiModalLine, ARM_START.to_vec()) };
    vec![
        line(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        line(vec![[1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
        SkillSpec::new(SkillKind::LineX, ARM_START.to_vec()),
    ]
}

/// Train A = (+X/+Y), B = (+X/-Y) and a pure +X policy, compose A and B at
/// equal weights and score the composition against each of the three.
pub fn run_mode_filtering(
    chain: &KinematicChain,
    config: &PipelineConfig,
    samples: usize,
    seed: u64,
) -> Result<ModeFilteringResult> {
    let specs = policies();
    let (ensemble, sets) = train_skill_policies(chain, &specs, config, seed)?;
    let starts = generate_skill_dataset(chain, &specs[2], samples, config.traj_len, config.dt, rng::substream(seed, "data/obs"))?
        .observations();
    let params = kernel_for(chain, config, &sets.iter().collect::<Vec<_>>())?;
    let seeds = |label: &str| -> Vec<u64> {
        (0..samples as u64).map(|i| rng::indexed(rng::substream(seed, label), i)).collect()
    };
    let composed = mode_filtering_check(ensemble.model(0), ensemble.model(1), &starts, &seeds("sample/composed"))?;
    let score = |k: usize, label: &str| -> Result<f64> {
        let own = sample_many(ensemble.model(k), &starts, &seeds(label))?;
        mmd_fk(&params, &composed, &own)
    };
    Ok(ModeFilteringResult {
        seed,
        gamma: params.gamma,
        vs_a: score(0, "sample/a")?,
        vs_b: score(1, "sample/b")?,
        vs_plus_x: score(2, "sample/plus-x")?,
    })
}

pub fn write_mode_filtering(path: &Path, results: &[ModeFilteringResult]) -> Result<()> {
    let mut s = String::from("seed,vs_plus_x,vs_a,vs_b\n");
    for r in results {
        let _ = writeln!(s, "{},{},{},{}", r.seed, r.vs_plus_x, r.vs_a, r.vs_b);
    }
    io::write_bytes(path, s.as_bytes())
}
