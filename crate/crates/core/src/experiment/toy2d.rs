//! Two unconditional models on 2D Gaussians, composed over a sweep of weights.

use std::fmt::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::svg::{plot, Series};
use crate::composition::{composed_sample_vectors, CompositionWeights, PolicyEnsemble};
use crate::diffusion::{train, Normalizer, TrainConfig, TrainingSet};
use crate::error::Result;
use crate::io;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toy2dConfig {
    pub means: [[f64; 2]; 2],
    pub std: f64,
    /// Training points per model.
    pub train_count: usize,
    /// Composed samples per weight setting.
    pub samples: usize,
    /// Weights on the first model; the second gets the rest.
    pub sweep: Vec<f64>,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for Toy2dConfig {
    fn default() -> Self {
        Self {
            means: [[5.0, 5.0], [-5.0, -5.0]],
            std: 1.0,
            train_count: 1000,
            samples: 200,
            sweep: vec![0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0],
            seed: 0,
            train: TrainConfig { epochs: 60, hidden: vec![64, 64, 64], ..TrainConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Toy2dPanel {
    pub w1: f64,
    pub mean: [f64; 2],
    /// Sample mean projected on the unit (1, 1) diagonal.
    pub projection: f64,
    pub samples: Vec<[f64; 2]>,
}

/// Train both models and sample every weight setting with the same seeds.
pub fn run_toy2d(config: &Toy2dConfig) -> Result<Vec<Toy2dPanel>> {
    let mut sets = Vec::with_capacity(2);
    for (i, mean) in config.means.iter().enumerate() {
        let mut r = rng::rng_from(rng::indexed(rng::substream(config.seed, "data"), i as u64));
        let rows: Vec<Vec<f64>> = (0..config.train_count)
            .map(|_| {
                mean.iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        m + config.std * z
                    })
                    .collect()
            })
            .collect();
        sets.push(rows);
    }
    let union: Vec<f64> = sets.iter().flatten().flatten().copied().collect();
    let normalizer = Normalizer::fit(&union, 2, &[], 0)?;
    let mut models = Vec::with_capacity(2);
    for (i, rows) in sets.iter().enumerate() {
        let cfg = TrainConfig {
            seed: rng::indexed(rng::substream(config.seed, "train"), i as u64),
            normalizer: Some(normalizer.clone()),
            ..config.train.clone()
        };
        models.push(train(&TrainingSet::from_vectors(rows)?, &cfg, &Default::default())?);
    }
    let ensemble = PolicyEnsemble::new(models, vec!["first".into(), "second".into()])?;
    let seeds: Vec<u64> = (0..config.samples as u64)
        .map(|i| rng::indexed(rng::substream(config.seed, "sample"), i))
        .collect();
    config
        .sweep
        .iter()
        .map(|&w1| {
            let w = CompositionWeights::new(vec![w1, 1.0 - w1])?;
            let samples: Vec<[f64; 2]> = composed_sample_vectors(&ensemble, &w, &seeds)?
                .into_iter()
                .map(|v| [v[0], v[1]])
                .collect();
            let n = samples.len() as f64;
            let mean = [
                samples.iter().map(|s| s[0]).sum::<f64>() / n,
                samples.iter().map(|s| s[1]).sum::<f64>() / n,
            ];
            let projection = (mean[0] + mean[1]) / 2f64.sqrt();
            Ok(Toy2dPanel { w1, mean, projection, samples })
        })
        .collect()
}

/// `toy2d_summary.csv`, one `toy2d_w<k>.csv` of samples per panel and an
/// SVG scatter of all panels.
pub fn write_toy2d(dir: &Path, panels: &[Toy2dPanel]) -> Result<()> {
    let mut summary = String::from("w1,mean_x,mean_y,projection\n");
    let colors = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
    let mut series = Vec::new();
    for (k, p) in panels.iter().enumerate() {
        let _ = writeln!(summary, "{},{},{},{}", p.w1, p.mean[0], p.mean[1], p.projection);
        let mut rows = String::from("x,y\n");
        for s in &p.samples {
            let _ = writeln!(rows, "{},{}", s[0], s[1]);
        }
        io::write_bytes(&dir.join(format!("toy2d_w{k}.csv")), rows.as_bytes())?;
        series.push(Series {
            label: format!("w1 = {:.3}", p.w1),
            color: colors[k % colors.len()],
            paths: vec![p.samples.clone()],
            dots: true,
        });
    }
    io::write_bytes(&dir.join("toy2d_summary.csv"), summary.as_bytes())?;
    io::write_bytes(&dir.join("toy2d.svg"), plot("composed samples by weight", ["x", "y"], &series).as_bytes())
}
