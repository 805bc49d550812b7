//! Static-equilibrium residuals, contact terms, the distance-to-contact
//! mapping and the aggregation physics scores.

use serde::{Deserialize, Serialize};

use crate::force::{GlobalForceField, Gravity};
use crate::geom::Vec3;

/// Per-anchor signed distances to the object surface plus the torque origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactState {
    /// Signed distances in meters, negative inside the object.
    pub distances: Vec<f64>,
    /// Object center of mass (defaults to the mesh volumetric centroid).
    pub center_of_mass: Vec3,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PhysicsResiduals {
    pub force: f64,
    pub torque: f64,
    pub contact: f64,
    pub contact2: f64,
}

/// `|| sum_k F_k + G ||^2`.
///
/// Sign convention: the residual vanishes when the hand force exactly
/// opposes gravity (`sum F = -G`).
pub fn force_residual(field: &GlobalForceField, g: &Gravity) -> f64 {
    let total: Vec3 = field.forces.iter().sum::<Vec3>() + g.vector();
    total.norm_squared()
}

/// `|| sum_k F_k x r_k ||^2` with `r_k` taken about `c`.
pub fn torque_residual(field: &GlobalForceField, c: &Vec3) -> f64 {
    let total: Vec3 = field
        .forces
        .iter()
        .zip(&field.positions)
        .map(|(f, p)| f.cross(&(p - c)))
        .sum();
    total.norm_squared()
}

/// `sum_k ||F_k|| * |d_k|`.
pub fn contact_residual(field: &GlobalForceField, contact: &ContactState) -> f64 {
    field
        .forces
        .iter()
        .zip(&contact.distances)
        .map(|(f, d)| f.norm() * d.abs())
        .sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The printed distance mapping,
/// `omega(d) = 1 / ((1 + e^{-16(d+1)}) (1 + e^{-16(d-0.75)}))`,
/// evaluated in a numerically stable form. Bounded in (0, 1) and
/// monotone nondecreasing above d = 0.75.
pub fn omega(d: f64) -> f64 {
    sigmoid(16.0 * (d + 1.0)) * sigmoid(16.0 * (d - 0.75))
}

/// Bump variant of [`omega`] with the second sigmoid falling instead of
/// rising: high on d in (-1, 0.75), low outside. This is the shape the
/// surrounding text describes ("transitions smoothly to 1 for
/// d in (0, 0.75)") and the one the solver's freeze rule needs; the
/// printed formula is kept verbatim in [`omega`].
pub fn omega_bump(d: f64) -> f64 {
    sigmoid(16.0 * (d + 1.0)) * sigmoid(-16.0 * (d - 0.75))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OmegaForm {
    /// The formula as printed.
    Verbatim,
    /// Sign-flipped second factor (contact-likelihood bump).
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceUnit {
    /// Distances are converted from meters to centimeters before the
    /// mapping; the constants -1 and 0.75 read as centimeters.
    Centimeters,
    /// Distances enter the mapping unchanged.
    RawMeters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OmegaConfig {
    pub form: OmegaForm,
    pub unit: DistanceUnit,
}

impl Default for OmegaConfig {
    /// Contact-likelihood configuration used by the solver: bump form
    /// over centimeter distances.
    fn default() -> Self {
        OmegaConfig {
            form: OmegaForm::Bump,
            unit: DistanceUnit::Centimeters,
        }
    }
}

/// Distance-to-contact-likelihood used by the solver initialization and
/// the contact2 penalty. `d` is in meters.
pub fn contact_likelihood(d_meters: f64, cfg: &OmegaConfig) -> f64 {
    let d = match cfg.unit {
        DistanceUnit::Centimeters => d_meters * 100.0,
        DistanceUnit::RawMeters => d_meters,
    };
    match cfg.form {
        OmegaForm::Verbatim => omega(d),
        OmegaForm::Bump => omega_bump(d),
    }
}

pub const CONTACT2_EPSILON: f64 = 1e-5;

/// `sum_k log^2( omega_k sqrt(sum s_i^2) / (s_k sqrt(sum omega_i^2) + eps) )`
/// over precomputed contact likelihoods.
pub fn contact2_from_likelihood(s: &[f64], omega_vals: &[f64]) -> f64 {
    debug_assert_eq!(s.len(), omega_vals.len());
    let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    let o_norm = omega_vals.iter().map(|v| v * v).sum::<f64>().sqrt();
    s.iter()
        .zip(omega_vals)
        .map(|(&sk, &ok)| {
            let ratio = ok * s_norm / (sk * o_norm + CONTACT2_EPSILON);
            ratio.ln().powi(2)
        })
        .sum()
}

/// Contact-consistency penalty over signed distances in meters.
pub fn contact2_residual(s: &[f64], d: &[f64], cfg: &OmegaConfig) -> f64 {
    let omega_vals: Vec<f64> = d.iter().map(|&dk| contact_likelihood(dk, cfg)).collect();
    contact2_from_likelihood(s, &omega_vals)
}

/// Hand physics score `-L_force * L_contact`; 0 is the best attainable.
pub fn hand_phys_score(res: &PhysicsResiduals) -> f64 {
    -res.force * res.contact
}

/// Object physics score `-L_torque * L_contact`.
pub fn object_phys_score(res: &PhysicsResiduals) -> f64 {
    -res.torque * res.contact
}
