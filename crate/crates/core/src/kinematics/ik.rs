use nalgebra::{DVector, Matrix3, Matrix3xX, Vector3};

use crate::error::{Error, Result};

use super::KinematicChain;

/// Damping used by the skill generators (length-unit scale 1).
pub const DEFAULT_DAMPING: f64 = 0.05;

/// `J^T (J J^T + lambda^2 I)^{-1} v`.
///
/// With `lambda == 0` a rank-deficient `J` is reported as
/// [`Error::Singular`] instead of producing non-finite output.
pub fn damped_least_squares(
    jac: &Matrix3xX<f64>,
    v: &Vector3<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("damping must be >= 0, got {lambda}")));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("target velocity must be finite"));
    }
    let a: Matrix3<f64> = jac * jac.transpose() + Matrix3::identity() * (lambda * lambda);
    if lambda == 0.0 {
        let eig = a.symmetric_eigen().eigenvalues;
        let max = eig.amax();
        let min = eig.min();
        if max == 0.0 || min <= 1e-12 * max {
            return Err(Error::Singular);
        }
    }
    let x = a.lu().solve(v).ok_or(Error::Singular)?;
    let qdot = jac.transpose() * x;
    if qdot.iter().all(|x| x.is_finite()) {
        Ok(qdot)
    } else {
        Err(Error::Singular)
    }
}

/// Joint velocity that moves the end-effector control point with
/// `target_velocity`.
pub fn damped_ls_ik_step(
    chain: &KinematicChain,
    q: &[f64],
    target_velocity: &Vector3<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let jac = chain.end_effector_jacobian(q)?;
    damped_least_squares(&jac, target_velocity, lambda)
}

/// Iterate damped-LS updates until the end effector reaches `target`.
/// Joints listed in `frozen` are held fixed. Returns the final residual.
pub(crate) fn solve_position(
    chain: &KinematicChain,
    q: &mut DVector<f64>,
    target: &Vector3<f64>,
    lambda: f64,
    frozen: Option<usize>,
) -> Result<f64> {
    const MAX_ITERS: usize = 200;
    const TOL: f64 = 1e-9;
    let mut err = target - chain.end_effector(q.as_slice())?;
    for _ in 0..MAX_ITERS {
        if err.norm() < TOL {
            break;
        }
        let mut jac = chain.end_effector_jacobian(q.as_slice())?;
        if let Some(j) = frozen {
            jac.column_mut(j).fill(0.0);
        }
        let dq = damped_least_squares(&jac, &err, lambda)?;
        *q += dq;
        chain.clamp(q.as_mut_slice());
        let next = target - chain.end_effector(q.as_slice())?;
        if next.norm() >= err.norm() * (1.0 - 1e-12) && next.norm() > TOL {
            err = next;
            break;
        }
        err = next;
    }
    Ok(err.norm())
}
