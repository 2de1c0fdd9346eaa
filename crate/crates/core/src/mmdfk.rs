//! MMD-FK: maximum mean discrepancy between trajectory sets under a kernel
//! that compares robot configurations through the task-space positions of
//! their control points.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kinematics::{KinematicChain, Trajectory};
use crate::sum::ExactSum;

/// How the configuration kernel is extended to whole trajectories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lift {
    /// Mean over aligned time steps.
    #[default]
    Aligned,
    /// Mean over all pairs of steps, ignoring time.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub gamma: f64,
    pub chain: KinematicChain,
    /// One non-negative weight per control point, summing to one.
    pub link_weights: Vec<f64>,
    #[serde(default)]
    pub lift: Lift,
}

impl KernelParams {
    /// Uniform link weights and the aligned lift.
    pub fn new(chain: KinematicChain, gamma: f64) -> Result<Self> {
        let m = chain.num_points();
        let p = Self {
            gamma,
            chain,
            link_weights: vec![1.0 / m as f64; m],
            lift: Lift::Aligned,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_link_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.link_weights = weights;
        self.validate()?;
        Ok(self)
    }

    pub fn with_lift(mut self, lift: Lift) -> Self {
        self.lift = lift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        check_dim("link weights", self.chain.num_points(), self.link_weights.len())?;
        if self.link_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("link weights must be non-negative"));
        }
        let total: f64 = self.link_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("link weights sum to {total}, not 1")));
        }
        Ok(())
    }

    fn points(&self, q: &[f64]) -> Result<Vec<Vector3<f64>>> {
        self.chain.forward_kinematics(q)
    }

    /// Kernel between configurations given their control-point positions.
    fn k_points(&self, a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.link_weights)
            .map(|((x, y), w)| w * rq((x - y).norm_squared(), self.gamma))
            .sum()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("kernel width must be positive, got {gamma}")))
    }
}

fn rq(dist2: f64, gamma: f64) -> f64 {
    let base = 1.0 + 0.5 * gamma * dist2;
    1.0 / (base * base)
}

/// Second-order rational-quadratic kernel `(1 + gamma/2 |x - y|^2)^-2`.
pub fn k_rq(x: &Vector3<f64>, y: &Vector3<f64>, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(rq((x - y).norm_squared(), gamma))
}

/// Link-weighted mean of [`k_rq`] over the control points of two configurations.
pub fn k_fk(params: &KernelParams, q1: &[f64], q2: &[f64]) -> Result<f64> {
    Ok(params.k_points(&params.points(q1)?, &params.points(q2)?))
}

/// Control-point positions of every step, computed once per trajectory.
struct Cached {
    steps: usize,
    points: Vec<Vector3<f64>>,
}

impl Cached {
    fn new(params: &KernelParams, traj: &Trajectory) -> Result<Self> {
        check_dim("trajectory dof", params.chain.dof(), traj.dof())?;
        let mut points = Vec::with_capacity(traj.len() * params.chain.num_points());
        for q in traj.steps() {
            points.extend(params.points(q)?);
        }
        Ok(Self { steps: traj.len(), points })
    }

    fn step(&self, i: usize) -> &[Vector3<f64>] {
        let m = self.points.len() / self.steps;
        &self.points[i * m..(i + 1) * m]
    }
}

fn k_cached(params: &KernelParams, a: &Cached, b: &Cached) -> f64 {
    match params.lift {
        Lift::Aligned => {
            let total: f64 = (0..a.steps).map(|s| params.k_points(a.step(s), b.step(s))).sum();
            total / a.steps as f64
        }
        Lift::Pooled => {
            let mut total = ExactSum::new();
            for s in 0..a.steps {
                for u in 0..b.steps {
                    total.add(params.k_points(a.step(s), b.step(u)));
                }
            }
            total.value() / (a.steps * b.steps) as f64
        }
    }
}

fn check_lengths(params: &KernelParams, a: &Trajectory, b: &Trajectory) -> Result<()> {
    if params.lift == Lift::Aligned {
        check_dim("trajectory length", a.len(), b.len())?;
    }
    Ok(())
}

/// Trajectory kernel: [`k_fk`] averaged over aligned steps, or over all step
/// pairs with [`Lift::Pooled`].
pub fn k_traj(params: &KernelParams, t1: &Trajectory, t2: &Trajectory) -> Result<f64> {
    check_lengths(params, t1, t2)?;
    Ok(k_cached(params, &Cached::new(params, t1)?, &Cached::new(params, t2)?))
}

fn cache_all(params: &KernelParams, set: &[Trajectory]) -> Result<Vec<Cached>> {
    set.iter().map(|t| Cached::new(params, t)).collect()
}

/// Unbiased squared-MMD estimate between trajectory sets `x` (m items) and
/// `y` (n items), both with at least two members. Exactly symmetric in its
/// arguments and may be slightly negative.
pub fn mmd_fk(params: &KernelParams, x: &[Trajectory], y: &[Trajectory]) -> Result<f64> {
    for (what, set) in [("first set", x), ("second set", y)] {
        if set.len() < 2 {
            return Err(Error::TooFewSamples { what, min: 2, got: set.len() });
        }
    }
    params.validate()?;
    let first = &x[0];
    for t in x.iter().chain(y) {
        check_lengths(params, first, t)?;
    }
    let cx = cache_all(params, x)?;
    let cy = cache_all(params, y)?;
    let within = |c: &[Cached]| {
        let mut s = ExactSum::new();
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                s.add(k_cached(params, &c[i], &c[j]));
            }
        }
        let n = c.len() as f64;
        2.0 * s.value() / (n * (n - 1.0))
    };
    let mut cross = ExactSum::new();
    for a in &cx {
        for b in &cy {
            cross.add(k_cached(params, a, b));
        }
    }
    let (m, n) = (x.len() as f64, y.len() as f64);
    Ok((within(&cx) + within(&cy)) - 2.0 * cross.value() / (m * n))
}

/// Kernel width from the median heuristic: `1 / median |FK(x) - FK(y)|^2`
/// over aligned steps and control points of distinct trajectories in `set`.
/// At most `max_pairs` trajectory pairs are used, evenly strided.
pub fn median_heuristic_gamma(chain: &KinematicChain, set: &[Trajectory], max_pairs: usize) -> Result<f64> {
    if set.len() < 2 {
        return Err(Error::TooFewSamples { what: "median heuristic", min: 2, got: set.len() });
    }
    let params = KernelParams::new(chain.clone(), 1.0)?;
    let cached = cache_all(&params, set)?;
    let pairs: Vec<(usize, usize)> = (0..set.len())
        .flat_map(|i| (i + 1..set.len()).map(move |j| (i, j)))
        .collect();
    let stride = pairs.len().div_ceil(max_pairs.max(1));
    let mut d2 = Vec::new();
    for &(i, j) in pairs.iter().step_by(stride) {
        let (a, b) = (&cached[i], &cached[j]);
        for s in 0..a.steps.min(b.steps) {
            d2.extend(a.step(s).iter().zip(b.step(s)).map(|(p, q)| (p - q).norm_squared()));
        }
    }
    d2.sort_by(f64::total_cmp);
    let median = d2[d2.len() / 2];
    if median > 0.0 {
        Ok(1.0 / median)
    } else {
        Err(Error::DivisionByZero("median squared distance is zero"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn random_traj(r: &mut crate::rng::Rng, len: usize, dof: usize) -> Trajectory {
        let flat = (0..len * dof).map(|_| r.random_range(-1.5..1.5)).collect();
        Trajectory::from_flat(flat, dof, 0.1).unwrap()
    }

    fn random_set(seed: u64, n: usize, len: usize) -> Vec<Trajectory> {
        let mut r = rng::rng_from(seed);
        (0..n).map(|_| random_traj(&mut r, len, 3)).collect()
    }

    fn constant(q: &[f64], len: usize) -> Trajectory {
        Trajectory::from_flat(q.repeat(len), q.len(), 0.1).unwrap()
    }

    #[test]
    fn rq_examples() {
        let o = Vector3::zeros();
        assert_eq!(k_rq(&o, &o, 3.0).unwrap(), 1.0);
        assert_abs_diff_eq!(k_rq(&o, &Vector3::new(1.0, 0.0, 0.0), 2.0).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(k_rq(&o, &Vector3::new(0.0, 2.0, 0.0), 1.0).unwrap(), 1.0 / 9.0, epsilon = 1e-12);
        assert!(k_rq(&o, &o, 0.0).is_err());
        assert!(k_rq(&o, &o, -1.0).is_err());
    }

    #[test]
    fn fk_kernel_examples() {
        let chain = KinematicChain::planar(&[1.0, 1.0]).unwrap();
        let p = KernelParams::new(chain, 1.0).unwrap();
        assert_eq!(k_fk(&p, &[0.3, 0.2], &[0.3, 0.2]).unwrap(), 1.0);
        assert_abs_diff_eq!(k_fk(&p, &[0.0, 0.0], &[PI, 0.0]).unwrap(), 5.0 / 81.0, epsilon = 1e-12);
        let (q1, q2) = ([0.4, -0.3], [1.1, 0.7]);
        let end = p.clone().with_link_weights(vec![0.0, 1.0]).unwrap();
        let ee1 = p.chain.end_effector(&q1).unwrap();
        let ee2 = p.chain.end_effector(&q2).unwrap();
        assert_abs_diff_eq!(k_fk(&end, &q1, &q2).unwrap(), k_rq(&ee1, &ee2, 1.0).unwrap(), epsilon = 1e-15);
        assert!(k_fk(&p, &[0.0], &[0.0, 0.0]).is_err());
        assert!(p.clone().with_link_weights(vec![0.5, 0.6]).is_err());
        assert!(p.with_link_weights(vec![1.0]).is_err());
    }

    #[test]
    fn trajectory_kernel_examples() {
        let p = KernelParams::new(KinematicChain::planar3(), 0.7).unwrap();
        let mut r = rng::rng_from(3);
        let a = random_traj(&mut r, 6, 3);
        assert_abs_diff_eq!(k_traj(&p, &a, &a).unwrap(), 1.0, epsilon = 1e-15);
        // differ only at step 2
        let mut flat = a.as_flat().to_vec();
        flat[6..9].copy_from_slice(&[0.1, -0.9, 1.2]);
        let b = Trajectory::from_flat(flat, 3, 0.1).unwrap();
        let k = k_fk(&p, a.step(2), b.step(2)).unwrap();
        assert_abs_diff_eq!(k_traj(&p, &a, &b).unwrap(), (5.0 + k) / 6.0, epsilon = 1e-12);
        // constant trajectories reduce to the configuration kernel
        let (q1, q2) = ([0.2, 0.3, -0.4], [1.0, -0.5, 0.1]);
        assert_abs_diff_eq!(
            k_traj(&p, &constant(&q1, 4), &constant(&q2, 4)).unwrap(),
            k_fk(&p, &q1, &q2).unwrap(),
            epsilon = 1e-15
        );
        assert!(k_traj(&p, &a, &random_traj(&mut r, 5, 3)).is_err());
        let pooled = p.with_lift(Lift::Pooled);
        assert!(k_traj(&pooled, &a, &random_traj(&mut r, 5, 3)).is_ok());
    }

    /// Independent estimator: plain loops, no caching, no exact summation.
    fn naive_mmd(chain: &KinematicChain, gamma: f64, x: &[Trajectory], y: &[Trajectory]) -> f64 {
        let k = |a: &Trajectory, b: &Trajectory| {
            let mut s = 0.0;
            for t in 0..a.len() {
                let pa = chain.forward_kinematics(a.step(t)).unwrap();
                let pb = chain.forward_kinematics(b.step(t)).unwrap();
                let mut inner = 0.0;
                for (u, v) in pa.iter().zip(&pb) {
                    let d2 = (u - v).dot(&(u - v));
                    inner += (1.0 + gamma / 2.0 * d2).powi(-2);
                }
                s += inner / pa.len() as f64;
            }
            s / a.len() as f64
        };
        let (m, n) = (x.len() as f64, y.len() as f64);
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (i, a) in x.iter().enumerate() {
            for (j, b) in x.iter().enumerate() {
                if i != j {
                    sxx += k(a, b);
                }
            }
        }
        for (i, a) in y.iter().enumerate() {
            for (j, b) in y.iter().enumerate() {
                if i != j {
                    syy += k(a, b);
                }
            }
        }
        for a in x {
            for b in y {
                sxy += k(a, b);
            }
        }
        sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * sxy / (m * n)
    }

    #[test]
    fn matches_naive_double_loop() {
        let chain = KinematicChain::arm3();
        for s in 0..10 {
            let x = random_set(2 * s, 5, 5);
            let y = random_set(2 * s + 1, 5, 5);
            let gamma = 0.5 + s as f64;
            let p = KernelParams::new(chain.clone(), gamma).unwrap();
            let got = mmd_fk(&p, &x, &y).unwrap();
            assert_abs_diff_eq!(got, naive_mmd(&chain, gamma, &x, &y), epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_constant_sets_give_zero() {
        let p = KernelParams::new(KinematicChain::planar3(), 1.0).unwrap();
        let a = constant(&[0.1, 0.2, 0.3], 4);
        let set = vec![a.clone(), a];
        assert_eq!(mmd_fk(&p, &set, &set).unwrap(), 0.0);
    }

    #[test]
    fn precondition_errors() {
        let p = KernelParams::new(KinematicChain::planar3(), 1.0).unwrap();
        let x = random_set(1, 3, 4);
        assert!(matches!(mmd_fk(&p, &x[..1], &x), Err(Error::TooFewSamples { .. })));
        assert!(matches!(mmd_fk(&p, &x, &x[..1]), Err(Error::TooFewSamples { .. })));
        let short = random_set(2, 3, 3);
        assert!(mmd_fk(&p, &x, &short).is_err());
        let planar = KinematicChain::planar(&[1.0, 1.0]).unwrap();
        assert!(mmd_fk(&KernelParams::new(planar, 1.0).unwrap(), &x, &x).is_err());
    }

    #[test]
    fn gram_matrix_is_positive_semidefinite() {
        let set = random_set(8, 20, 6);
        for lift in [Lift::Aligned, Lift::Pooled] {
            let p = KernelParams::new(KinematicChain::arm3(), 2.0).unwrap().with_lift(lift);
            let g = DMatrix::from_fn(20, 20, |i, j| k_traj(&p, &set[i], &set[j]).unwrap());
            let min = g.symmetric_eigenvalues().min();
            assert!(min > -1e-8, "{lift:?}: min eigenvalue {min}");
        }
    }

    #[test]
    fn median_heuristic() {
        let chain = KinematicChain::planar(&[1.0, 1.0]).unwrap();
        // end points 2 apart, elbow points 1 apart... every pair shares the same distances
        let set = vec![constant(&[0.0, 0.0], 3), constant(&[PI, 0.0], 3)];
        // distances^2 between control points: 4 (elbow) and 16 (tip)
        assert_eq!(median_heuristic_gamma(&chain, &set, 10).unwrap(), 1.0 / 16.0);
        let same = vec![constant(&[0.0, 0.0], 3); 3];
        assert!(median_heuristic_gamma(&chain, &same, 10).is_err());
        assert!(median_heuristic_gamma(&chain, &same[..1], 10).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn estimator_is_symmetric_and_bounded(
            sx in any::<u64>(),
            sy in any::<u64>(),
            m in 2usize..7,
            n in 2usize..7,
            gamma in 0.05f64..20.0,
            pooled in any::<bool>(),
        ) {
            let lift = if pooled { Lift::Pooled } else { Lift::Aligned };
            let p = KernelParams::new(KinematicChain::arm3(), gamma).unwrap().with_lift(lift);
            let x = random_set(sx, m, 4);
            let y = random_set(sy, n, 4);
            let a = mmd_fk(&p, &x, &y).unwrap();
            prop_assert_eq!(a.to_bits(), mmd_fk(&p, &y, &x).unwrap().to_bits());
            prop_assert!(a.abs() <= 2.0);
            let mut shuffled = x.clone();
            shuffled.reverse();
            prop_assert_eq!(a.to_bits(), mmd_fk(&p, &shuffled, &y).unwrap().to_bits());
        }

        #[test]
        fn kernel_values_in_unit_interval(sx in any::<u64>(), gamma in 0.01f64..50.0) {
            let p = KernelParams::new(KinematicChain::arm3(), gamma).unwrap();
            let s = random_set(sx, 2, 3);
            let k = k_traj(&p, &s[0], &s[1]).unwrap();
            prop_assert!(k > 0.0 && k <= 1.0);
            prop_assert_eq!(k.to_bits(), k_traj(&p, &s[1], &s[0]).unwrap().to_bits());
        }
    }
}
