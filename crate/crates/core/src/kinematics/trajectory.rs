use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Joint angles in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn new(q: Vec<f64>) -> Self {
        Self(q)
    }

    pub fn dof(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(q: Vec<f64>) -> Self {
        Self(q)
    }
}

/// Fixed-length sequence of joint configurations, stored row-major
/// (`len` rows of `dof` angles).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dof: usize,
    dt: f64,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn from_flat(data: Vec<f64>, dof: usize, dt: f64) -> Result<Self> {
        if dof == 0 {
            return Err(Error::invalid("trajectory dof must be positive"));
        }
        if data.len() % dof != 0 {
            return Err(Error::DimensionMismatch {
                what: "trajectory data length (multiple of dof)",
                expected: (data.len() / dof + 1) * dof,
                got: data.len(),
            });
        }
        if data.len() / dof < 2 {
            return Err(Error::invalid("trajectory needs at least 2 steps"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("trajectory dt must be positive, got {dt}")));
        }
        Ok(Self { dof, dt, data })
    }

    pub fn from_steps(steps: &[JointConfig], dt: f64) -> Result<Self> {
        let dof = steps.first().map(JointConfig::dof).unwrap_or(0);
        let mut data = Vec::with_capacity(steps.len() * dof);
        for s in steps {
            check_dim("trajectory step dof", dof, s.dof())?;
            data.extend_from_slice(s.as_slice());
        }
        Self::from_flat(data, dof, dt)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dof
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, i: usize) -> &[f64] {
        &self.data[i * self.dof..(i + 1) * self.dof]
    }

    pub fn steps(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dof)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }
}

/// One demonstration: the conditioning observation and the trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Demo {
    pub obs: JointConfig,
    pub traj: Trajectory,
}

/// A non-empty set of demonstrations sharing length, DoF and `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    demos: Vec<Demo>,
}

impl DemoSet {
    pub fn new(demos: Vec<Demo>) -> Result<Self> {
        let first = demos.first().ok_or(Error::EmptyDataset)?;
        let (len, dof, dt) = (first.traj.len(), first.traj.dof(), first.traj.dt());
        for d in &demos {
            check_dim("demo trajectory length", len, d.traj.len())?;
            check_dim("demo trajectory dof", dof, d.traj.dof())?;
            check_dim("demo observation dof", dof, d.obs.dof())?;
            if d.traj.dt() != dt {
                return Err(Error::invalid("demos disagree on dt"));
            }
        }
        Ok(Self { demos })
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn traj_len(&self) -> usize {
        self.demos[0].traj.len()
    }

    pub fn dof(&self) -> usize {
        self.demos[0].traj.dof()
    }

    pub fn dt(&self) -> f64 {
        self.demos[0].traj.dt()
    }

    pub fn demos(&self) -> &[Demo] {
        &self.demos
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Demo> {
        self.demos.iter()
    }

    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.demos.iter().map(|d| d.traj.clone()).collect()
    }

    pub fn observations(&self) -> Vec<JointConfig> {
        self.demos.iter().map(|d| d.obs.clone()).collect()
    }

    /// First `n` demos (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Result<Self> {
        Self::new(self.demos.iter().take(n).cloned().collect())
    }

    /// Concatenation of several sets.
    pub fn concat(sets: &[&DemoSet]) -> Result<Self> {
        Self::new(sets.iter().flat_map(|s| s.demos.iter().cloned()).collect())
    }

    /// Split into `[0, at)` and `[at, len)`.
    pub fn split_at(&self, at: usize) -> Result<(Self, Self)> {
        let (a, b) = self.demos.split_at(at.min(self.demos.len()));
        Ok((Self::new(a.to_vec())?, Self::new(b.to_vec())?))
    }
}

impl<'a> IntoIterator for &'a DemoSet {
    type Item = &'a Demo;
    type IntoIter = std::slice::Iter<'a, Demo>;

    fn into_iter(self) -> Self::IntoIter {
        self.demos.iter()
    }
}
