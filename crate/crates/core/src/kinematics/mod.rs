//! Serial-chain kinematics and the skill-trajectory generators.

mod chain;
mod ik;
mod skills;
mod trajectory;

pub use chain::{DhRow, KinematicChain};
pub use ik::{damped_least_squares, damped_ls_ik_step, DEFAULT_DAMPING};
pub use skills::{generate_skill_dataset, osc_joint, SkillKind, SkillSpec, TRACKING_TOLERANCE};
pub use trajectory::{Demo, DemoSet, JointConfig, Trajectory};
