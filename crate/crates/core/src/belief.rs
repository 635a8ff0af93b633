//! Gaussian-mixture Kalman filter over lane-center hypotheses.
//!
//! Each mixture component carries the vehicle state conditioned on one
//! candidate lane center. The sensors (speedometer and camera) update every
//! component with a linear Kalman step and reweight by measurement
//! likelihood. The driver's suggested steering angle is a third measurement:
//! each hypothesis predicts what the driver would steer if it were true, and
//! the weights are reweighted by how well the suggestion matches. That last
//! update touches weights only.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{LinearizedInput, PlantModel, VehicleState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent<T: Scalar> {
    pub mean: VehicleState<T>,
    pub covariance: Matrix4<T>,
    pub weight: T,
}

impl<T: Scalar> MixtureComponent<T> {
    pub fn new(mean: VehicleState<T>, covariance: Matrix4<T>, weight: T) -> Self {
        Self { mean, covariance, weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState<T: Scalar> {
    components: Vec<MixtureComponent<T>>,
}

impl<T: Scalar> BeliefState<T> {
    /// Validates weights (non-negative, summing to one) and covariances
    /// (symmetric positive-definite).
    pub fn new(components: Vec<MixtureComponent<T>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut total = T::zero();
        for c in &components {
            if !(c.weight >= T::zero() && c.weight <= T::one()) {
                return Err(Error::InvalidParameter(format!("weight {} outside [0, 1]", c.weight)));
            }
            if !c.mean.is_finite() {
                return Err(Error::NonFinite);
            }
            if !is_spd(&c.covariance) {
                return Err(Error::InvalidParameter("covariance must be symmetric positive-definite".into()));
            }
            total += c.weight;
        }
        if (total - T::one()).abs() > T::weight_tolerance() {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[MixtureComponent<T>] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<T> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// True when every covariance is still symmetric positive-definite.
    pub fn is_consistent(&self) -> bool {
        self.components.iter().all(|c| is_spd(&c.covariance) && c.mean.is_finite())
    }
}

fn is_spd<T: Scalar>(m: &Matrix4<T>) -> bool {
    let scale = m.amax().max(T::one());
    let tol = T::default_epsilon() * T::lit(64.0) * scale;
    if (m - m.transpose()).amax() > tol {
        return false;
    }
    m.clone_owned().cholesky().is_some()
}

fn symmetrize<T: Scalar>(m: Matrix4<T>) -> Matrix4<T> {
    (m + m.transpose()) * T::lit(0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement<T> {
    /// Speedometer reading (m/s).
    pub z1: T,
    /// Camera lateral offset, `y + b` plus noise (m).
    pub z2: T,
}

impl<T: Scalar> Measurement<T> {
    pub fn new(z1: T, z2: T) -> Self {
        Self { z1, z2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig<T> {
    /// Speedometer noise standard deviation (m/s).
    pub sigma_z1: T,
    /// Camera noise standard deviation (m).
    pub sigma_z2: T,
    /// Process noise covariance, row-major.
    pub process_noise: [[T; 4]; 4],
    /// Spread of the driver's steering around the model prediction (rad).
    pub sigma_delta: T,
}

impl<T: Scalar> Default for NoiseConfig<T> {
    fn default() -> Self {
        let z = T::zero();
        Self {
            sigma_z1: T::lit(0.1),
            sigma_z2: T::lit(0.2),
            process_noise: [
                [T::lit(1e-4), z, z, z],
                [z, T::lit(1e-4), z, z],
                [z, z, T::lit(1e-3), z],
                [z, z, z, T::lit(1e-8)],
            ],
            sigma_delta: T::lit(0.03),
        }
    }
}

impl<T: Scalar> NoiseConfig<T> {
    pub fn q(&self) -> Matrix4<T> {
        Matrix4::from_fn(|r, c| self.process_noise[r][c])
    }

    pub fn r(&self) -> Matrix2<T> {
        Matrix2::new(self.sigma_z1 * self.sigma_z1, T::zero(), T::zero(), self.sigma_z2 * self.sigma_z2)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_z1", self.sigma_z1), ("sigma_z2", self.sigma_z2), ("sigma_delta", self.sigma_delta)] {
            if !(v > T::zero() && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        let q = self.q();
        if (q - q.transpose()).amax() > T::default_epsilon() {
            return Err(Error::InvalidParameter("process noise must be symmetric".into()));
        }
        let eig = q.symmetric_eigenvalues();
        let floor = -T::default_epsilon() * T::lit(64.0) * q.amax().max(T::one());
        if eig.iter().any(|e| *e < floor) {
            return Err(Error::InvalidParameter("process noise must be positive semi-definite".into()));
        }
        Ok(())
    }
}

/// Camera and speedometer observation matrix: `z1 = xi1`, `z2 = xi2 + xi4`.
pub fn observation_matrix<T: Scalar>() -> Matrix2x4<T> {
    let (z, o) = (T::zero(), T::one());
    #[rustfmt::skip]
    let h = Matrix2x4::new(
        o, z, z, z,
        z, o, z, o,
    );
    h
}

/// Time update: every mean advanced through the plant, `Sigma -> A Sigma A' + Q`.
pub fn predict<T: Scalar>(
    belief: &BeliefState<T>,
    u: &LinearizedInput<T>,
    plant: &PlantModel<T>,
    noise: &NoiseConfig<T>,
) -> BeliefState<T> {
    let q = noise.q();
    let components = belief
        .components
        .iter()
        .map(|c| {
            let f = plant.state_jacobian(&c.mean);
            MixtureComponent {
                mean: plant.step(&c.mean, u),
                covariance: symmetrize(f * c.covariance * f.transpose() + q),
                weight: c.weight,
            }
        })
        .collect();
    BeliefState { components }
}

/// Measurement update of every component plus likelihood reweighting.
pub fn update_measurement<T: Scalar>(
    belief: &BeliefState<T>,
    z: &Measurement<T>,
    noise: &NoiseConfig<T>,
) -> Result<BeliefState<T>> {
    if !(z.z1.is_finite() && z.z2.is_finite()) {
        return Err(Error::NonFinite);
    }
    let h = observation_matrix::<T>();
    let r = noise.r();
    let zv = Vector2::new(z.z1, z.z2);
    let identity = Matrix4::<T>::identity();
    let half = T::lit(0.5);

    let mut components = Vec::with_capacity(belief.len());
    let mut log_weights = Vec::with_capacity(belief.len());
    for c in &belief.components {
        let x = c.mean.to_vector();
        let innovation = zv - h * x;
        let s = h * c.covariance * h.transpose() + r;
        let det = s.determinant();
        let s_inv = match s.try_inverse() {
            Some(inv) if det > T::zero() && det.is_finite() => inv,
            _ => return Err(Error::DegenerateCovariance),
        };
        let gain = c.covariance * h.transpose() * s_inv;
        let mean = x + gain * innovation;
        let ikh = identity - gain * h;
        // Joseph form keeps the covariance positive-definite under rounding.
        let covariance = symmetrize(ikh * c.covariance * ikh.transpose() + gain * r * gain.transpose());

        let mahalanobis = (innovation.transpose() * s_inv * innovation)[(0, 0)];
        let log_likelihood = -half * mahalanobis - half * det.ln() - T::two_pi().ln();
        log_weights.push(c.weight.ln() + log_likelihood);
        components.push(MixtureComponent { mean: VehicleState::from_vector(&mean), covariance, weight: c.weight });
    }

    let weights = normalize_log_weights(&log_weights).ok_or(Error::DegenerateCovariance)?;
    for (c, w) in components.iter_mut().zip(weights) {
        c.weight = w;
    }
    Ok(BeliefState { components })
}

fn normalize_log_weights<T: Scalar>(log_weights: &[T]) -> Option<Vec<T>> {
    let max = log_weights.iter().copied().fold(T::min_value()?, |a, b| a.max(b));
    if !max.is_finite() {
        return None;
    }
    let unnormalized: Vec<T> = log_weights.iter().map(|lw| (*lw - max).exp()).collect();
    let total = unnormalized.iter().fold(T::zero(), |a, b| a + *b);
    Some(unnormalized.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvisorUpdate<T: Scalar> {
    pub belief: BeliefState<T>,
    /// Set when every hypothesis gave the suggestion zero likelihood and the
    /// weights were left unchanged.
    pub underflow: bool,
}

/// Reweights the hypotheses by the likelihood of the driver's suggested
/// steering angle under each hypothesis' predicted steering.
///
/// `predicted[i]` is the steering the driver model expects if hypothesis `i`
/// is the true lane center. Means and covariances are untouched.
pub fn update_advisor<T: Scalar>(
    belief: &BeliefState<T>,
    suggested: T,
    predicted: &[T],
    noise: &NoiseConfig<T>,
) -> Result<AdvisorUpdate<T>> {
    if predicted.len() != belief.len() {
        return Err(Error::LengthMismatch { expected: belief.len(), found: predicted.len() });
    }
    if !suggested.is_finite() {
        return Err(Error::NonFinite);
    }
    let half = T::lit(0.5);
    let sigma = noise.sigma_delta;
    let likelihoods: Vec<T> = predicted
        .iter()
        .map(|p| {
            let z = (suggested - *p) / sigma;
            let l = (-half * z * z).exp();
            if l.is_finite() {
                l
            } else {
                T::zero()
            }
        })
        .collect();

    let unnormalized: Vec<T> = belief.components.iter().zip(&likelihoods).map(|(c, l)| c.weight * *l).collect();
    let total = unnormalized.iter().fold(T::zero(), |a, b| a + *b);

    let mut out = belief.clone();
    if !(total > T::zero()) {
        // Uniform likelihoods leave the weights as they were.
        return Ok(AdvisorUpdate { belief: out, underflow: true });
    }
    for (c, w) in out.components.iter_mut().zip(unnormalized) {
        c.weight = w / total;
    }
    Ok(AdvisorUpdate { belief: out, underflow: false })
}

/// Weighted mean state across components.
pub fn mixture_mean<T: Scalar>(belief: &BeliefState<T>) -> VehicleState<T> {
    let sum = belief.components.iter().fold(nalgebra::Vector4::zeros(), |acc, c| acc + c.mean.to_vector() * c.weight);
    VehicleState::from_vector(&sum)
}
