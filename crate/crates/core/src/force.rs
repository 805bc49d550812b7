//! Friction-cone basis construction and local/global contact-force
//! evaluation over the 32 hand anchors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};

pub const NUM_ANCHORS: usize = 32;

/// Discretized friction cone: `v_j = (mu sin(2 pi j / N_v), mu cos(2 pi j / N_v), 1)`
/// for j = 1..N_v, each making angle atan(mu) with the local +z axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrictionConeBasis {
    pub mu: f64,
    pub vectors: Vec<Vec3>,
}

pub fn cone_basis(mu: f64, n_v: usize) -> Result<FrictionConeBasis> {
    if mu <= 0.0 {
        return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
    }
    if n_v < 3 {
        return Err(Error::InvalidParameter(format!("N_v must be >= 3, got {n_v}")));
    }
    let vectors = (1..=n_v)
        .map(|j| {
            let a = 2.0 * std::f64::consts::PI * j as f64 / n_v as f64;
            Vec3::new(mu * a.sin(), mu * a.cos(), 1.0)
        })
        .collect();
    Ok(FrictionConeBasis { mu, vectors })
}

impl FrictionConeBasis {
    pub fn n_v(&self) -> usize {
        self.vectors.len()
    }
}

/// Per-anchor simplex weights `w` and nonnegative scales `s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForceCoefficients {
    /// 32 rows, each on the simplex over N_v basis vectors.
    pub weights: Vec<Vec<f64>>,
    /// 32 nonnegative scales.
    pub scales: Vec<f64>,
}

impl ForceCoefficients {
    pub fn uniform(n_v: usize, scale: f64) -> Self {
        ForceCoefficients {
            weights: vec![vec![1.0 / n_v as f64; n_v]; NUM_ANCHORS],
            scales: vec![scale; NUM_ANCHORS],
        }
    }

    pub fn validate(&self, n_v: usize) -> Result<()> {
        if self.weights.len() != NUM_ANCHORS || self.scales.len() != NUM_ANCHORS {
            return Err(Error::DimensionMismatch {
                expected: NUM_ANCHORS,
                got: self.weights.len().min(self.scales.len()),
            });
        }
        for row in &self.weights {
            if row.len() != n_v {
                return Err(Error::DimensionMismatch {
                    expected: n_v,
                    got: row.len(),
                });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|w| *w < -1e-12) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter("weights off the simplex".into()));
            }
        }
        if self.scales.iter().any(|s| *s < 0.0) {
            return Err(Error::InvalidParameter("negative scale".into()));
        }
        Ok(())
    }
}

/// Anchor position and local-to-global frame.
#[derive(Debug, Clone, Copy)]
pub struct AnchorFrame {
    pub position: Vec3,
    pub frame: Mat3,
}

/// Anchor positions with their world-frame forces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalForceField {
    pub positions: Vec<Vec3>,
    pub forces: Vec<Vec3>,
}

/// `F'_k = s_k sum_j w_kj v_j` in each anchor's local frame.
pub fn local_forces(c: &ForceCoefficients, b: &FrictionConeBasis) -> Result<Vec<Vec3>> {
    c.validate(b.n_v())?;
    Ok(c.weights
        .iter()
        .zip(&c.scales)
        .map(|(row, &s)| {
            let sum: Vec3 = row
                .iter()
                .zip(&b.vectors)
                .map(|(&w, v)| w * v)
                .sum();
            s * sum
        })
        .collect())
}

/// `F_k = R_k^{L2G} F'_k` at each anchor.
pub fn global_forces(local: &[Vec3], anchors: &[AnchorFrame]) -> Result<GlobalForceField> {
    if local.len() != anchors.len() {
        return Err(Error::DimensionMismatch {
            expected: anchors.len(),
            got: local.len(),
        });
    }
    Ok(GlobalForceField {
        positions: anchors.iter().map(|a| a.position).collect(),
        forces: local
            .iter()
            .zip(anchors)
            .map(|(f, a)| a.frame * f)
            .collect(),
    })
}

/// Gravity with a fixed relative magnitude of 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Gravity {
    pub direction: Vec3,
}

impl Gravity {
    pub fn new(direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if n < 1e-12 {
            return Err(Error::InvalidParameter("zero gravity direction".into()));
        }
        Ok(Gravity {
            direction: direction / n,
        })
    }

    /// The gravity vector, magnitude 1 relative newton.
    pub fn vector(&self) -> Vec3 {
        self.direction
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn basis_fixed_entries() {
        let b = cone_basis(1.0, 12).unwrap();
        // j = 12: angle 2 pi
        assert_relative_eq!(b.vectors[11], Vec3::new(0.0, 1.0, 1.0), epsilon = 1e-12);
        // j = 3: angle pi/2
        assert_relative_eq!(b.vectors[2], Vec3::new(1.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn basis_cone_angle() {
        for mu in [0.5, 1.0, 2.0] {
            let b = cone_basis(mu, 12).unwrap();
            for v in &b.vectors {
                let angle = (v.xy().norm() / v.z).atan();
                assert!((angle - mu.atan()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_basis_params() {
        assert!(cone_basis(0.0, 12).is_err());
        assert!(cone_basis(1.0, 2).is_err());
    }

    #[test]
    fn uniform_weights_give_pure_normal() {
        let b = cone_basis(1.0, 12).unwrap();
        let c = ForceCoefficients::uniform(12, 1.0);
        let f = local_forces(&c, &b).unwrap();
        for fk in &f {
            assert_relative_eq!(*fk, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_scale_gives_zero_force() {
        let b = cone_basis(1.0, 12).unwrap();
        let c = ForceCoefficients::uniform(12, 0.0);
        let f = local_forces(&c, &b).unwrap();
        assert!(f.iter().all(|fk| fk.norm() == 0.0));
    }

    #[test]
    fn one_hot_weight_scales_basis_vector() {
        let b = cone_basis(1.0, 12).unwrap();
        let mut c = ForceCoefficients::uniform(12, 2.0);
        for row in &mut c.weights {
            row.iter_mut().for_each(|w| *w = 0.0);
            row[2] = 1.0; // j = 3
        }
        let f = local_forces(&c, &b).unwrap();
        assert_relative_eq!(f[0], Vec3::new(2.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn cone_containment_random_coefficients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let b = cone_basis(1.0, 12).unwrap();
        for _ in 0..100 {
            let mut c = ForceCoefficients::uniform(12, 0.0);
            for k in 0..NUM_ANCHORS {
                let raw: Vec<f64> = (0..12).map(|_| rng.gen::<f64>()).collect();
                let sum: f64 = raw.iter().sum();
                c.weights[k] = raw.iter().map(|r| r / sum).collect();
                c.scales[k] = rng.gen::<f64>() * 3.0;
            }
            let f = local_forces(&c, &b).unwrap();
            for fk in &f {
                assert!(fk.xy().norm() <= b.mu * fk.z + 1e-9);
            }
        }
    }

    #[test]
    fn global_forces_preserve_norm_and_identity() {
        let b = cone_basis(1.0, 12).unwrap();
        let c = ForceCoefficients::uniform(12, 1.5);
        let local = local_forces(&c, &b).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let anchors: Vec<AnchorFrame> = (0..NUM_ANCHORS)
            .map(|_| {
                let aa = crate::geom::RotationAA(Vec3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                ));
                AnchorFrame {
                    position: Vec3::zeros(),
                    frame: crate::geom::aa_to_matrix(aa),
                }
            })
            .collect();
        let field = global_forces(&local, &anchors).unwrap();
        for (f, l) in field.forces.iter().zip(&local) {
            assert!((f.norm() - l.norm()).abs() < 1e-12);
        }
        let id_anchors: Vec<AnchorFrame> = (0..NUM_ANCHORS)
            .map(|_| AnchorFrame {
                position: Vec3::zeros(),
                frame: Mat3::identity(),
            })
            .collect();
        let field = global_forces(&local, &id_anchors).unwrap();
        for (f, l) in field.forces.iter().zip(&local) {
            assert_relative_eq!(f, l, epsilon = 1e-15);
        }
    }
}
