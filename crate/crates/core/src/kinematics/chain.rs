use nalgebra::{Matrix3xX, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One row of a standard (distal) Denavit–Hartenberg table for a revolute
/// joint: `T = Rz(q + theta_offset) Tz(d) Tx(a) Rx(alpha)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
}

impl DhRow {
    pub fn new(a: f64, alpha: f64, d: f64, theta_offset: f64) -> Self {
        Self {
            a,
            alpha,
            d,
            theta_offset,
        }
    }

    pub fn transform(&self, q: f64) -> Matrix4<f64> {
        let (st, ct) = (q + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        #[rustfmt::skip]
        let m = Matrix4::new(
            ct, -st * ca,  st * sa, self.a * ct,
            st,  ct * ca, -ct * sa, self.a * st,
            0.0,      sa,       ca, self.d,
            0.0,     0.0,      0.0, 1.0,
        );
        m
    }
}

/// Revolute serial chain with one control point per link.
///
/// Control point `m` is expressed in the frame at the distal end of link
/// `m`; by default it is that frame's origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainFile", into = "ChainFile")]
pub struct KinematicChain {
    name: String,
    links: Vec<DhRow>,
    limits: Vec<[f64; 2]>,
    control_points: Vec<Vector3<f64>>,
}

impl KinematicChain {
    pub fn new(
        name: impl Into<String>,
        links: Vec<DhRow>,
        limits: Vec<[f64; 2]>,
        control_points: Vec<[f64; 3]>,
    ) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::invalid("chain needs at least one link"));
        }
        check_dim("joint limits", links.len(), limits.len())?;
        check_dim("control points", links.len(), control_points.len())?;
        for (i, [lo, hi]) in limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::invalid(format!(
                    "joint {i}: limits must satisfy lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        let finite = links
            .iter()
            .all(|r| [r.a, r.alpha, r.d, r.theta_offset].iter().all(|v| v.is_finite()))
            && control_points.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("chain parameters must be finite"));
        }
        Ok(Self {
            name: name.into(),
            links,
            limits,
            control_points: control_points.iter().map(|p| Vector3::from(*p)).collect(),
        })
    }

    /// Chain whose control points are the link-frame origins and whose
    /// joints are limited to `[-pi, pi]`.
    pub fn from_dh(name: impl Into<String>, links: Vec<DhRow>) -> Result<Self> {
        let n = links.len();
        let pi = std::f64::consts::PI;
        Self::new(name, links, vec![[-pi, pi]; n], vec![[0.0; 3]; n])
    }

    /// Planar chain in the XY plane with the given link lengths.
    pub fn planar(lengths: &[f64]) -> Result<Self> {
        let links = lengths.iter().map(|&a| DhRow::new(a, 0.0, 0.0, 0.0)).collect();
        Self::from_dh(format!("planar{}", lengths.len()), links)
    }

    /// Planar 3-link chain with unit links; the default test chain.
    pub fn planar3() -> Self {
        Self::planar(&[1.0, 1.0, 1.0]).expect("valid chain")
    }

    /// Spatial 3-DoF arm (base yaw, shoulder and elbow pitch) used by the
    /// desk-scale experiments.
    pub fn arm3() -> Self {
        let half_pi = std::f64::consts::FRAC_PI_2;
        Self::new(
            "arm3",
            vec![
                DhRow::new(0.0, half_pi, 0.3, 0.0),
                DhRow::new(0.5, 0.0, 0.0, 0.0),
                DhRow::new(0.5, 0.0, 0.0, 0.0),
            ],
            vec![[-2.9, 2.9], [-0.2, 3.0], [-2.8, 2.8]],
            vec![[0.15, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        )
        .expect("valid chain")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// Number of control points (equal to the number of links).
    pub fn num_points(&self) -> usize {
        self.control_points.len()
    }

    pub fn links(&self) -> &[DhRow] {
        &self.links
    }

    pub fn limits(&self) -> &[[f64; 2]] {
        &self.limits
    }

    pub fn control_points(&self) -> &[Vector3<f64>] {
        &self.control_points
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.limits)
            .all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, [lo, hi]) in q.iter_mut().zip(&self.limits) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Cumulative transforms `T_0 = I, T_1, ..., T_n` from base to each link frame.
    pub fn frames(&self, q: &[f64]) -> Result<Vec<Matrix4<f64>>> {
        check_dim("joint configuration", self.dof(), q.len())?;
        let mut out = Vec::with_capacity(self.dof() + 1);
        let mut acc = Matrix4::identity();
        out.push(acc);
        for (row, &qi) in self.links.iter().zip(q) {
            acc *= row.transform(qi);
            out.push(acc);
        }
        Ok(out)
    }

    /// World positions of all control points.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Vec<Vector3<f64>>> {
        let frames = self.frames(q)?;
        Ok(self.points_from_frames(&frames))
    }

    fn points_from_frames(&self, frames: &[Matrix4<f64>]) -> Vec<Vector3<f64>> {
        self.control_points
            .iter()
            .enumerate()
            .map(|(m, p)| {
                let h = frames[m + 1] * Vector4::new(p.x, p.y, p.z, 1.0);
                Vector3::new(h.x, h.y, h.z)
            })
            .collect()
    }

    pub fn end_effector(&self, q: &[f64]) -> Result<Vector3<f64>> {
        Ok(*self.forward_kinematics(q)?.last().expect("at least one link"))
    }

    /// World rotation axis of joint `j` (the z axis of frame `j`).
    pub fn joint_axis(&self, q: &[f64], j: usize) -> Result<Vector3<f64>> {
        if j >= self.dof() {
            return Err(Error::IndexOutOfRange {
                what: "joint",
                index: j,
                len: self.dof(),
            });
        }
        let f = self.frames(q)?[j];
        Ok(Vector3::new(f[(0, 2)], f[(1, 2)], f[(2, 2)]))
    }

    /// Positional Jacobian of control point `point_index`. Column `j` is
    /// `z_j x (p - o_j)` for joints proximal to the point and zero otherwise.
    pub fn jacobian(&self, q: &[f64], point_index: usize) -> Result<Matrix3xX<f64>> {
        if point_index >= self.num_points() {
            return Err(Error::IndexOutOfRange {
                what: "control point",
                index: point_index,
                len: self.num_points(),
            });
        }
        let frames = self.frames(q)?;
        let p = self.points_from_frames(&frames)[point_index];
        let mut jac = Matrix3xX::zeros(self.dof());
        for (j, f) in frames.iter().enumerate().take(point_index + 1) {
            let z = Vector3::new(f[(0, 2)], f[(1, 2)], f[(2, 2)]);
            let o = Vector3::new(f[(0, 3)], f[(1, 3)], f[(2, 3)]);
            jac.set_column(j, &z.cross(&(p - o)));
        }
        Ok(jac)
    }

    pub fn end_effector_jacobian(&self, q: &[f64]) -> Result<Matrix3xX<f64>> {
        self.jacobian(q, self.num_points() - 1)
    }
}

#[derive(Serialize, Deserialize)]
struct ChainFile {
    name: String,
    #[serde(default = "standard")]
    convention: String,
    dh: Vec<[f64; 4]>,
    limits: Vec<[f64; 2]>,
    #[serde(default)]
    control_points: Option<Vec<[f64; 3]>>,
}

fn standard() -> String {
    "standard".into()
}

impl TryFrom<ChainFile> for KinematicChain {
    type Error = Error;

    fn try_from(f: ChainFile) -> Result<Self> {
        if f.convention != "standard" {
            return Err(Error::invalid(format!(
                "unsupported DH convention {:?} (only \"standard\")",
                f.convention
            )));
        }
        let n = f.dh.len();
        let links = f
            .dh
            .into_iter()
            .map(|[a, alpha, d, th]| DhRow::new(a, alpha, d, th))
            .collect();
        KinematicChain::new(
            f.name,
            links,
            f.limits,
            f.control_points.unwrap_or_else(|| vec![[0.0; 3]; n]),
        )
    }
}

impl From<KinematicChain> for ChainFile {
    fn from(c: KinematicChain) -> Self {
        ChainFile {
            name: c.name,
            convention: standard(),
            dh: c
                .links
                .iter()
                .map(|r| [r.a, r.alpha, r.d, r.theta_offset])
                .collect(),
            limits: c.limits,
            control_points: Some(c.control_points.iter().map(|p| [p.x, p.y, p.z]).collect()),
        }
    }
}
