//! Hill-type contractile element: activation dynamics and the
//! force–length, force–velocity and passive curves.

use crate::error::{Error, Result};

use super::{MuscleDef, MuscleState};

/// Activation time constant (s), used while excitation exceeds activation.
pub const TAU_ACTIVATION: f64 = 0.010;
/// Deactivation time constant (s).
pub const TAU_DEACTIVATION: f64 = 0.040;
/// Width of the Gaussian active force–length curve.
pub const FL_WIDTH: f64 = 0.45;
/// Eccentric force ceiling of the force–velocity curve.
pub const FV_MAX: f64 = 1.4;
/// Hill's concentric shape constant (a / F0).
pub const FV_CONCENTRIC_SHAPE: f64 = 0.25;
/// Eccentric shape constant, chosen so the curve is C1 at zero velocity.
pub const FV_ECCENTRIC_SHAPE: f64 = (FV_MAX - 1.0) * FV_CONCENTRIC_SHAPE / (1.0 + FV_CONCENTRIC_SHAPE);
/// Maximum shortening velocity, in optimal fiber lengths per second.
pub const MAX_CONTRACTION_VELOCITY: f64 = 10.0;
/// Exponential strain constant of the parallel elastic element.
pub const PE_STIFFNESS: f64 = 10.0;

/// One explicit Euler step of `da/dt = (u - a) / tau`, clamped to `[0, 1]`.
pub fn activation_step(state: &MuscleState, excitation: f64, dt: f64) -> Result<MuscleState> {
    if !(0.0..=1.0).contains(&excitation) {
        return Err(Error::InvalidArgument(format!("excitation {excitation} outside [0, 1]")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("activation step needs dt > 0, got {dt}")));
    }
    let a = state.activation;
    let tau = if excitation > a { TAU_ACTIVATION } else { TAU_DEACTIVATION };
    let next = (a + dt * (excitation - a) / tau).clamp(0.0, 1.0);
    Ok(MuscleState { activation: next, ..*state })
}

pub fn force_length(norm_length: f64) -> f64 {
    let d = norm_length - 1.0;
    (-d * d / FL_WIDTH).exp()
}

/// Hill hyperbola for shortening (`v < 0`), saturating eccentric branch for
/// lengthening; clamped to `[0, FV_MAX]`. Velocity is in units of
/// `MAX_CONTRACTION_VELOCITY * l_opt`.
pub fn force_velocity(norm_velocity: f64) -> f64 {
    let v = norm_velocity;
    let f = if v <= -1.0 {
        0.0
    } else if v <= 0.0 {
        (1.0 + v) / (1.0 - v / FV_CONCENTRIC_SHAPE)
    } else {
        (FV_MAX * v + FV_ECCENTRIC_SHAPE) / (v + FV_ECCENTRIC_SHAPE)
    };
    f.clamp(0.0, FV_MAX)
}

pub fn passive_force_length(norm_length: f64) -> f64 {
    if norm_length <= 1.0 {
        return 0.0;
    }
    let num = (PE_STIFFNESS * (norm_length - 1.0)).exp() - 1.0;
    let den = (0.5 * PE_STIFFNESS).exp() - 1.0;
    (num / den).min(1.0)
}

/// Contractile force in newtons; never negative.
pub fn muscle_force(muscle: &MuscleDef, state: &MuscleState, norm_length: f64, norm_velocity: f64) -> Result<f64> {
    if !(norm_length > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "muscle {}: normalized length must be positive, got {norm_length}",
            muscle.name
        )));
    }
    let active = state.activation * force_length(norm_length) * force_velocity(norm_velocity);
    let f = muscle.f_max * (active + passive_force_length(norm_length));
    Ok(f.max(0.0))
}
