use nalgebra::{DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

use super::ik::solve_position;
use super::{Demo, DemoSet, JointConfig, KinematicChain, Trajectory, DEFAULT_DAMPING};

/// Largest end-effector deviation from the reference path accepted by the
/// generators.
pub const TRACKING_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkillKind {
    LineX,
    LineY,
    LineZ,
    CircleX,
    CircleY,
    CircleZ,
    OscX,
    OscY,
    OscZ,
    Spiral,
    Step,
    SMotion,
    Spring,
    MultiModalLine,
}

impl SkillKind {
    pub const ALL: [SkillKind; 14] = [
        SkillKind::LineX,
        SkillKind::LineY,
        SkillKind::LineZ,
        SkillKind::CircleX,
        SkillKind::CircleY,
        SkillKind::CircleZ,
        SkillKind::OscX,
        SkillKind::OscY,
        SkillKind::OscZ,
        SkillKind::Spiral,
        SkillKind::Step,
        SkillKind::SMotion,
        SkillKind::Spring,
        SkillKind::MultiModalLine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SkillKind::LineX => "line-x",
            SkillKind::LineY => "line-y",
            SkillKind::LineZ => "line-z",
            SkillKind::CircleX => "circle-x",
            SkillKind::CircleY => "circle-y",
            SkillKind::CircleZ => "circle-z",
            SkillKind::OscX => "osc-x",
            SkillKind::OscY => "osc-y",
            SkillKind::OscZ => "osc-z",
            SkillKind::Spiral => "spiral",
            SkillKind::Step => "step",
            SkillKind::SMotion => "s-motion",
            SkillKind::Spring => "spring",
            SkillKind::MultiModalLine => "multi-modal-line",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn uses_drift(self) -> bool {
        matches!(
            self,
            SkillKind::Spiral | SkillKind::Step | SkillKind::SMotion | SkillKind::Spring
        )
    }
}

impl std::fmt::Display for SkillKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parametric task-space skill.
///
/// All paths start at the (randomised) initial end-effector position `p0`
/// and are sampled at `s = k dt`:
///
/// | kind | path |
/// |------|------|
/// | `line-*` | `p0 + speed s e_axis` |
/// | `circle-*` | circle of radius `amplitude` in the plane normal to the axis, tangential speed `speed` |
/// | `osc-*` | the mid-chain joint best aligned with the axis swings `amplitude sin(speed s)` radians while the end effector is held at `p0` |
/// | `spiral` | `circle-x` plus `drift s` along +X |
/// | `step` | `drift s` along +X with a smooth rise of `amplitude` along +Z at mid-path (rise time `amplitude / speed`) |
/// | `s-motion` | `drift s` along +X with `amplitude sin(speed s / amplitude)` along +Y |
/// | `spring` | loops of radius `amplitude` in the XZ plane advancing `drift s` along +X |
/// | `multi-modal-line` | a line along one of `modes` (picked uniformly per sample) |
///
/// The initial configuration is `start` plus independent uniform noise of
/// half-width `joint_jitter` on each joint; the end effector's initial
/// position and orientation both follow from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub kind: SkillKind,
    pub amplitude: f64,
    pub speed: f64,
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub modes: Vec<[f64; 3]>,
    pub start: Vec<f64>,
    pub joint_jitter: f64,
}

impl SkillSpec {
    pub fn new(kind: SkillKind, start: Vec<f64>) -> Self {
        Self {
            kind,
            amplitude: 0.1,
            speed: 0.2,
            drift: 0.1,
            modes: match kind {
                SkillKind::MultiModalLine => vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                _ => vec![],
            },
            start,
            joint_jitter: 0.1,
        }
    }

    pub fn validate(&self, chain: &KinematicChain) -> Result<()> {
        let pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be positive, got {v}")))
            }
        };
        pos(self.amplitude, "amplitude")?;
        pos(self.speed, "speed")?;
        if self.kind.uses_drift() {
            pos(self.drift, "drift")?;
        }
        if !(self.joint_jitter >= 0.0 && self.joint_jitter.is_finite()) {
            return Err(Error::invalid("joint_jitter must be >= 0"));
        }
        check_dim("skill start configuration", chain.dof(), self.start.len())?;
        if !chain.within_limits(&self.start) {
            return Err(Error::invalid("skill start configuration violates joint limits"));
        }
        if self.kind == SkillKind::MultiModalLine {
            if self.modes.is_empty() {
                return Err(Error::invalid("multi-modal-line needs at least one mode"));
            }
            if self.modes.iter().any(|m| Vector3::from(*m).norm() < 1e-12) {
                return Err(Error::invalid("multi-modal-line modes must be non-zero"));
            }
        }
        Ok(())
    }

    /// End-effector displacement from `p0` at time `s`; `duration` is the
    /// full path time and `mode` the selected direction for multi-modal skills.
    fn displacement(&self, s: f64, duration: f64, mode: &Vector3<f64>) -> Vector3<f64> {
        let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
        let circle = |u: Vector3<f64>, v: Vector3<f64>| {
            let th = self.speed / self.amplitude * s;
            (u * (th.cos() - 1.0) + v * th.sin()) * self.amplitude
        };
        match self.kind {
            SkillKind::LineX => x * self.speed * s,
            SkillKind::LineY => y * self.speed * s,
            SkillKind::LineZ => z * self.speed * s,
            SkillKind::CircleX => circle(y, z),
            SkillKind::CircleY => circle(z, x),
            SkillKind::CircleZ => circle(x, y),
            SkillKind::OscX | SkillKind::OscY | SkillKind::OscZ => Vector3::zeros(),
            SkillKind::Spiral => circle(y, z) + x * self.drift * s,
            SkillKind::Step => {
                let rise = self.amplitude / self.speed;
                let u = ((s - 0.5 * duration) / rise + 0.5).clamp(0.0, 1.0);
                x * self.drift * s + z * self.amplitude * u * u * (3.0 - 2.0 * u)
            }
            SkillKind::SMotion => {
                x * self.drift * s + y * self.amplitude * (self.speed * s / self.amplitude).sin()
            }
            SkillKind::Spring => {
                let th = self.speed / self.amplitude * s;
                x * (self.drift * s + self.amplitude * th.sin())
                    + z * (self.amplitude * (th.cos() - 1.0))
            }
            SkillKind::MultiModalLine => mode.normalize() * self.speed * s,
        }
    }

    fn osc_axis(&self) -> Option<Vector3<f64>> {
        match self.kind {
            SkillKind::OscX => Some(Vector3::x()),
            SkillKind::OscY => Some(Vector3::y()),
            SkillKind::OscZ => Some(Vector3::z()),
            _ => None,
        }
    }
}

/// Joint driven by an oscillation skill: among the mid-chain joints (all but
/// the first and last when the chain has three or more), the one whose world
/// rotation axis at `q` is most aligned with `axis`.
pub fn osc_joint(chain: &KinematicChain, q: &[f64], axis: &Vector3<f64>) -> Result<usize> {
    let n = chain.dof();
    let candidates = if n >= 3 { 1..n - 1 } else { 0..n };
    let mut best = (candidates.start, -1.0);
    for j in candidates {
        let a = chain.joint_axis(q, j)?.dot(axis).abs();
        if a > best.1 + 1e-12 {
            best = (j, a);
        }
    }
    Ok(best.0)
}

/// Generate `count` demonstrations of `spec`, each `len` steps of `dt`
/// seconds. Sample `i` uses the generator seeded by `(seed, i)`, so the
/// output does not depend on how samples are scheduled.
pub fn generate_skill_dataset(
    chain: &KinematicChain,
    spec: &SkillSpec,
    count: usize,
    len: usize,
    dt: f64,
    seed: u64,
) -> Result<DemoSet> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    if len < 2 {
        return Err(Error::invalid("trajectory length must be at least 2"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt must be positive"));
    }
    spec.validate(chain)?;
    let demos = (0..count)
        .map(|i| generate_one(chain, spec, len, dt, rng::indexed(seed, i as u64), i))
        .collect::<Result<Vec<_>>>()?;
    DemoSet::new(demos)
}

fn generate_one(
    chain: &KinematicChain,
    spec: &SkillSpec,
    len: usize,
    dt: f64,
    seed: u64,
    index: usize,
) -> Result<Demo> {
    let mut rng = rng::rng_from(seed);
    let mut q0: Vec<f64> = spec
        .start
        .iter()
        .map(|&s| {
            if spec.joint_jitter > 0.0 {
                s + rng.random_range(-spec.joint_jitter..=spec.joint_jitter)
            } else {
                s
            }
        })
        .collect();
    chain.clamp(&mut q0);
    let mode = if spec.kind == SkillKind::MultiModalLine {
        Vector3::from(spec.modes[rng.random_range(0..spec.modes.len())])
    } else {
        Vector3::zeros()
    };

    let p0 = chain.end_effector(&q0)?;
    let duration = (len - 1) as f64 * dt;
    let osc = match spec.osc_axis() {
        Some(axis) => Some(osc_joint(chain, &q0, &axis)?),
        None => None,
    };

    let mut q = DVector::from_vec(q0.clone());
    let mut steps = Vec::with_capacity(len);
    steps.push(JointConfig::new(q0.clone()));
    for k in 1..len {
        let s = k as f64 * dt;
        if let Some(j) = osc {
            q[j] = q0[j] + spec.amplitude * (spec.speed * s).sin();
            chain.clamp(q.as_mut_slice());
        }
        let target = p0 + spec.displacement(s, duration, &mode);
        let residual = solve_position(chain, &mut q, &target, DEFAULT_DAMPING, osc)?;
        if residual > TRACKING_TOLERANCE {
            return Err(Error::Tracking {
                sample: index,
                step: k,
                error: residual,
                tolerance: TRACKING_TOLERANCE,
            });
        }
        steps.push(JointConfig::new(q.as_slice().to_vec()));
    }
    Ok(Demo {
        obs: JointConfig::new(q0),
        traj: Trajectory::from_steps(&steps, dt)?,
    })
}
