//! Constant-velocity Kalman filter over `(cx, cy, aspect, h)` plus rates, and
//! observation-centric online smoothing (OOS) for tracks re-acquired after a
//! gap.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::geometry::Measurement;

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;

/// Innovation covariances with a worse condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Floor applied to a non-physical predicted aspect or height.
const MIN_SHAPE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("innovation covariance is singular or ill-conditioned (condition {condition:e})")]
    SingularInnovation { condition: f64 },
}

/// Per-track standard deviations scale with box height through these weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProfile {
    pub position_weight: f64,
    pub velocity_weight: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            position_weight: 1.0 / 20.0,
            velocity_weight: 1.0 / 160.0,
        }
    }
}

impl NoiseProfile {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.position_weight > 0.0 && self.position_weight.is_finite()) {
            return Err(format!("position_weight must be > 0, got {}", self.position_weight));
        }
        if !(self.velocity_weight > 0.0 && self.velocity_weight.is_finite()) {
            return Err(format!("velocity_weight must be > 0, got {}", self.velocity_weight));
        }
        Ok(())
    }

    fn process_noise(&self, h: f64) -> StateCovariance {
        let p = self.position_weight * h;
        let v = self.velocity_weight * h;
        let std = [p, p, 1e-2, p, v, v, 1e-5, v];
        StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)))
    }

    fn measurement_noise(&self, h: f64) -> SMatrix<f64, 4, 4> {
        let p = self.position_weight * h;
        let std = [p, p, 1e-1, p];
        SMatrix::<f64, 4, 4>::from_diagonal(&SVector::<f64, 4>::from_iterator(std.iter().map(|s| s * s)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl KalmanState {
    /// The `(cx, cy, aspect, h)` part of the mean.
    pub fn measurement(&self) -> Measurement {
        [self.mean[0], self.mean[1], self.mean[2], self.mean[3]]
    }
}

/// Constant-velocity transition with a unit time step.
pub fn transition_matrix() -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation_matrix() -> SMatrix<f64, 4, 8> {
    let mut h = SMatrix::<f64, 4, 8>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

pub fn kf_init(measurement: &Measurement, profile: &NoiseProfile) -> KalmanState {
    let h = measurement[3];
    let p = 2.0 * profile.position_weight * h;
    let v = 10.0 * profile.velocity_weight * h;
    let std = [p, p, 1e-2, p, v, v, 1e-5, v];
    let mut mean = StateVector::zeros();
    mean.fixed_rows_mut::<4>(0).copy_from_slice(measurement);
    KalmanState {
        mean,
        covariance: StateCovariance::from_diagonal(&StateVector::from_iterator(
            std.iter().map(|s| s * s),
        )),
    }
}

pub fn kf_predict(s: &KalmanState, profile: &NoiseProfile) -> KalmanState {
    let f = transition_matrix();
    let q = profile.process_noise(s.mean[3]);
    let mut mean = f * s.mean;
    // Clamp-and-zero keeps long-coasting tracks physical.
    for (shape, rate) in [(2, 6), (3, 7)] {
        if mean[shape] <= 0.0 {
            mean[shape] = MIN_SHAPE;
            mean[rate] = 0.0;
        }
    }
    let covariance = symmetrize(&(f * s.covariance * f.transpose() + q));
    KalmanState { mean, covariance }
}

/// Linear Kalman correction for an `N`-dimensional state observed through an
/// `M`-row measurement matrix. The posterior covariance uses the Joseph form.
pub fn kalman_correct<const N: usize, const M: usize>(
    mean: &SVector<f64, N>,
    covariance: &SMatrix<f64, N, N>,
    observation: &SMatrix<f64, M, N>,
    noise: &SMatrix<f64, M, M>,
    z: &SVector<f64, M>,
) -> Result<(SVector<f64, N>, SMatrix<f64, N, N>), MotionError> {
    let innovation_cov = observation * covariance * observation.transpose() + noise;
    let innovation_cov = (innovation_cov + innovation_cov.transpose()) * 0.5;
    if innovation_cov.cholesky().is_none() {
        return Err(MotionError::SingularInnovation { condition: f64::INFINITY });
    }
    let inverse = innovation_cov
        .try_inverse()
        .ok_or(MotionError::SingularInnovation { condition: f64::INFINITY })?;
    // 1-norm condition number ‖S‖₁‖S⁻¹‖₁.
    let condition = one_norm(&innovation_cov) * one_norm(&inverse);
    if !(condition.is_finite() && condition <= MAX_INNOVATION_CONDITION) {
        return Err(MotionError::SingularInnovation { condition });
    }
    let gain = covariance * observation.transpose() * inverse;
    let innovation = z - observation * mean;
    let new_mean = mean + gain * innovation;
    let i_kh = SMatrix::<f64, N, N>::identity() - gain * observation;
    let new_cov = i_kh * covariance * i_kh.transpose() + gain * noise * gain.transpose();
    Ok((new_mean, symmetrize(&new_cov)))
}

fn one_norm<const M: usize>(m: &SMatrix<f64, M, M>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

pub fn kf_update(
    s: &KalmanState,
    measurement: &Measurement,
    profile: &NoiseProfile,
) -> Result<KalmanState, MotionError> {
    let r = profile.measurement_noise(measurement[3]);
    let z = SVector::<f64, 4>::from_column_slice(measurement);
    let (mean, covariance) = kalman_correct(&s.mean, &s.covariance, &observation_matrix(), &r, &z)?;
    Ok(KalmanState { mean, covariance })
}

/// Linearly interpolated observations strictly between `t1` and `t2`.
pub fn virtual_observations(
    last_obs: &Measurement,
    t1: u32,
    new_obs: &Measurement,
    t2: u32,
) -> Vec<(u32, Measurement)> {
    let span = f64::from(t2 - t1);
    (t1 + 1..t2)
        .map(|t| {
            let frac = f64::from(t - t1) / span;
            let mut m = [0.0; 4];
            for k in 0..4 {
                m[k] = last_obs[k] + (new_obs[k] - last_obs[k]) * frac;
            }
            (t, m)
        })
        .collect()
}

/// Re-runs the filter from the posterior at the last real observation through
/// interpolated virtual observations, then through `new_obs` at `t2`.
///
/// Requires `t2 > t1 + 1`.
pub fn oos_rerun(
    state_at_last_obs: &KalmanState,
    last_obs: &Measurement,
    t1: u32,
    new_obs: &Measurement,
    t2: u32,
    profile: &NoiseProfile,
) -> Result<KalmanState, MotionError> {
    debug_assert!(t2 > t1 + 1, "oos_rerun needs a gap ({t1} -> {t2})");
    let mut state = state_at_last_obs.clone();
    for (_, z) in virtual_observations(last_obs, t1, new_obs, t2) {
        state = kf_update(&kf_predict(&state, profile), &z, profile)?;
    }
    kf_update(&kf_predict(&state, profile), new_obs, profile)
}
