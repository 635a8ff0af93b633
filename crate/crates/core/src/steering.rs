//! Near/far-point visual angles and the generalized two-point steering model.
//!
//! The model predicts the steering angle at step `k` as
//!
//! ```text
//! delta(k) = a0 delta(k-1) + a1 delta(k-2)
//!          + b0 phi(k) + b1 phi(k-1) + b2 phi(k-2) + b3 phi(k-3)
//!          + c0 omega(k)
//!          + d0 ydot(k) + d1 ydot(k-1)
//! ```
//!
//! where `phi` and `omega` are the near- and far-point angles and `ydot` the
//! lateral velocity.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DriverCommand, Pose};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const N_COEFFICIENTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualAngles<T> {
    /// Near-point angle `theta + psi` (rad).
    pub phi: T,
    /// Far-point angle `theta + rho` (rad).
    pub omega: T,
    /// Bearing of the near point from the road axis (rad).
    pub psi: T,
    /// Bearing of the far point from the road axis (rad).
    pub rho: T,
}

impl<T: Scalar> VisualAngles<T> {
    pub fn from_bearings(theta: T, psi: T, rho: T) -> Self {
        Self { phi: theta + psi, omega: theta + rho, psi, rho }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry<T> {
    /// Candidate lateral lane-center positions (m).
    pub lane_centers: Vec<T>,
    /// Near-point lookahead (m).
    pub d_near: T,
    /// Far-point lookahead (m).
    pub d_far: T,
}

impl<T: Scalar> LaneGeometry<T> {
    pub fn new(lane_centers: Vec<T>, d_near: T, d_far: T) -> Result<Self> {
        let g = Self { lane_centers, d_near, d_far };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lane_centers.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(self.d_near > T::zero() && self.d_far > self.d_near) {
            return Err(Error::InvalidParameter("lookaheads must satisfy 0 < d_near < d_far".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for LaneGeometry<T> {
    fn default() -> Self {
        Self { lane_centers: vec![T::zero(), T::lit(-1.8)], d_near: T::lit(5.0), d_far: T::lit(50.0) }
    }
}

/// Visual angles toward the lane center `lane_center` on a straight road along `x`.
///
/// Positive angles place the lane center to the left (towards `+y`).
pub fn visual_angles<T: Scalar>(pose: &Pose<T>, lane_center: T, geometry: &LaneGeometry<T>) -> VisualAngles<T> {
    visual_angles_from_offset(pose.theta, pose.y - lane_center, geometry)
}

/// Same as [`visual_angles`] but from the lateral offset `y - y_c` directly.
pub fn visual_angles_from_offset<T: Scalar>(theta: T, offset: T, geometry: &LaneGeometry<T>) -> VisualAngles<T> {
    let psi = (-offset).atan2(geometry.d_near);
    let rho = (-offset).atan2(geometry.d_far);
    VisualAngles::from_bearings(theta, psi, rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringCoefficients<T> {
    /// Weights on `delta(k-1)`, `delta(k-2)`.
    pub a: [T; 2],
    /// Weights on `phi(k)` .. `phi(k-3)`.
    pub b: [T; 4],
    /// Weight on `omega(k)`.
    pub c0: T,
    /// Weights on `ydot(k)`, `ydot(k-1)`.
    pub d: [T; 2],
}

impl<T: Scalar> SteeringCoefficients<T> {
    /// Generalized two-point model coefficients identified from a human driver.
    pub fn human_fit() -> Self {
        Self::from_array([1.47, 0.51, -5.73, 17.32, -17.65, 6.12, 0.11, 0.02, -0.02].map(T::lit))
    }

    /// A closed-loop stable driver used for synthetic experiments.
    ///
    /// Mostly a damped near-point derivative steer with a small far-point
    /// term; stays stable at 1.5x scaling of the autoregressive part.
    pub fn synthetic_reference() -> Self {
        Self::from_array([0.5, -0.4, 1.05, -1.0, 0.0, 0.0, 0.05, 0.0, 0.0].map(T::lit))
    }

    pub fn from_array(v: [T; N_COEFFICIENTS]) -> Self {
        Self { a: [v[0], v[1]], b: [v[2], v[3], v[4], v[5]], c0: v[6], d: [v[7], v[8]] }
    }

    pub fn to_array(&self) -> [T; N_COEFFICIENTS] {
        [self.a[0], self.a[1], self.b[0], self.b[1], self.b[2], self.b[3], self.c0, self.d[0], self.d[1]]
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self::from_array(self.to_array().map(|c| c * factor))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    pub const NAMES: [&'static str; N_COEFFICIENTS] = ["a0", "a1", "b0", "b1", "b2", "b3", "c0", "d0", "d1"];
}

/// Lagged regressors for one prediction. A plain value, threaded through the
/// simulation loop explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorWindow<T> {
    /// `delta(k-1)`, `delta(k-2)`.
    pub delta_hist: [T; 2],
    /// `phi(k)` .. `phi(k-3)`.
    pub phi_hist: [T; 4],
    /// `omega(k)`.
    pub omega_now: T,
    /// `ydot(k)`, `ydot(k-1)`.
    pub ydot_hist: [T; 2],
    delta_filled: u8,
    phi_filled: u8,
    ydot_filled: u8,
}

impl<T: Scalar> Default for RegressorWindow<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> RegressorWindow<T> {
    pub fn new() -> Self {
        let z = T::zero();
        Self {
            delta_hist: [z; 2],
            phi_hist: [z; 4],
            omega_now: z,
            ydot_hist: [z; 2],
            delta_filled: 0,
            phi_filled: 0,
            ydot_filled: 0,
        }
    }

    /// A fully populated window.
    pub fn warm(delta_hist: [T; 2], phi_hist: [T; 4], omega_now: T, ydot_hist: [T; 2]) -> Self {
        Self { delta_hist, phi_hist, omega_now, ydot_hist, delta_filled: 2, phi_filled: 4, ydot_filled: 2 }
    }

    /// Shifts in the step-`k` observation; call before predicting `delta(k)`.
    pub fn observe(&mut self, phi: T, omega: T, ydot: T) {
        self.phi_hist = [phi, self.phi_hist[0], self.phi_hist[1], self.phi_hist[2]];
        self.ydot_hist = [ydot, self.ydot_hist[0]];
        self.omega_now = omega;
        self.phi_filled = (self.phi_filled + 1).min(4);
        self.ydot_filled = (self.ydot_filled + 1).min(2);
    }

    /// Shifts in the steering actually issued at step `k`; call after predicting.
    pub fn record_steering(&mut self, delta: T) {
        self.delta_hist = [delta, self.delta_hist[0]];
        self.delta_filled = (self.delta_filled + 1).min(2);
    }

    pub fn is_warm(&self) -> bool {
        self.delta_filled >= 2 && self.phi_filled >= 4 && self.ydot_filled >= 2
    }

    /// Regressors in coefficient order.
    pub fn regressors(&self) -> [T; N_COEFFICIENTS] {
        let (d, p, y) = (self.delta_hist, self.phi_hist, self.ydot_hist);
        [d[0], d[1], p[0], p[1], p[2], p[3], self.omega_now, y[0], y[1]]
    }

    pub fn scaled(&self, factor: T) -> Self {
        let mut w = *self;
        w.delta_hist = w.delta_hist.map(|v| v * factor);
        w.phi_hist = w.phi_hist.map(|v| v * factor);
        w.omega_now *= factor;
        w.ydot_hist = w.ydot_hist.map(|v| v * factor);
        w
    }
}

pub fn predict_steering<T: Scalar>(coeffs: &SteeringCoefficients<T>, window: &RegressorWindow<T>) -> Result<T> {
    if !window.is_warm() {
        return Err(Error::WarmUp);
    }
    Ok(dot(&coeffs.to_array(), &window.regressors()))
}

fn dot<T: Scalar>(a: &[T; N_COEFFICIENTS], b: &[T; N_COEFFICIENTS]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

/// One recorded time step as seen by the steering model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringSample<T> {
    /// Steering the driver issued (rad).
    pub delta: T,
    pub phi: T,
    pub omega: T,
    /// Lateral velocity (m/s).
    pub ydot: T,
}

/// Replays a trajectory through a [`RegressorWindow`], yielding
/// `(step, window, issued delta)` for every warm step.
pub fn warm_windows<T: Scalar>(
    samples: &[SteeringSample<T>],
) -> impl Iterator<Item = (usize, RegressorWindow<T>, T)> + '_ {
    let mut window = RegressorWindow::new();
    samples.iter().enumerate().filter_map(move |(k, s)| {
        window.observe(s.phi, s.omega, s.ydot);
        let out = window.is_warm().then_some((k, window, s.delta));
        window.record_steering(s.delta);
        out
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub coefficients: SteeringCoefficients<T>,
    /// Per-coefficient standard errors, in coefficient order.
    pub standard_errors: [T; N_COEFFICIENTS],
    /// Unbiased residual variance (rad^2).
    pub residual_variance: T,
    /// Ratio of extreme singular values of the regressor matrix.
    pub condition_number: T,
    pub samples: usize,
}

/// Ordinary least squares over the stacked one-step regressions of every trajectory.
pub fn fit_coefficients<T: Scalar>(trajectories: &[Vec<SteeringSample<T>>]) -> Result<FitResult<T>> {
    let rows: Vec<([T; N_COEFFICIENTS], T)> =
        trajectories.iter().flat_map(|t| warm_windows(t).map(|(_, w, delta)| (w.regressors(), delta))).collect();
    let n = rows.len();
    if n < N_COEFFICIENTS {
        return Err(Error::InsufficientData { needed: N_COEFFICIENTS, available: n });
    }
    if rows.iter().any(|(x, y)| !y.is_finite() || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite);
    }

    let x = DMatrix::from_fn(n, N_COEFFICIENTS, |r, c| rows[r].0[c]);
    let y = DVector::from_fn(n, |r, _| rows[r].1);
    let svd = x.clone().svd(true, true);
    let s = &svd.singular_values;
    let s_max = s.max();
    let s_min = s.min();
    let tol = T::default_epsilon() * T::from_count(n.max(N_COEFFICIENTS)) * s_max;
    let rank = s.iter().filter(|v| **v > tol).count();
    if rank < N_COEFFICIENTS || !(s_max > T::zero()) {
        return Err(Error::RankDeficient { rank, columns: N_COEFFICIENTS });
    }

    let beta = svd.solve(&y, tol).map_err(|_| Error::RankDeficient { rank, columns: N_COEFFICIENTS })?;
    let residual = &y - &x * &beta;
    let dof = n - N_COEFFICIENTS;
    let residual_variance = if dof > 0 { residual.norm_squared() / T::from_count(dof) } else { T::zero() };

    // (X'X)^-1 = V S^-2 V'
    let v_t = svd.v_t.as_ref().expect("svd computed with V");
    let mut standard_errors = [T::zero(); N_COEFFICIENTS];
    for (j, se) in standard_errors.iter_mut().enumerate() {
        let var: T = (0..N_COEFFICIENTS).fold(T::zero(), |acc, i| {
            let vji = v_t[(i, j)];
            acc + vji * vji / (s[i] * s[i])
        });
        *se = (residual_variance * var).sqrt();
    }

    let mut coeffs = [T::zero(); N_COEFFICIENTS];
    coeffs.copy_from_slice(beta.as_slice());
    Ok(FitResult {
        coefficients: SteeringCoefficients::from_array(coeffs),
        standard_errors,
        residual_variance,
        condition_number: s_max / s_min,
        samples: n,
    })
}

/// Parameters of the synthetic stand-in driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverTuning<T> {
    /// Steering noise standard deviation (rad).
    pub noise_std: T,
    /// Speed the driver loosely holds (m/s).
    pub target_speed: T,
    /// Proportional speed-hold gain (1/s).
    pub speed_gain: T,
    /// Near-point gain used while the regressor window is warming up.
    pub warmup_gain: T,
    /// Acceleration noise standard deviation, a slow speed wander (m/s^2).
    pub accel_noise_std: T,
}

impl<T: Scalar> Default for DriverTuning<T> {
    fn default() -> Self {
        Self {
            noise_std: T::lit(0.01),
            target_speed: T::lit(15.0),
            speed_gain: T::lit(0.5),
            warmup_gain: T::lit(0.5),
            accel_noise_std: T::zero(),
        }
    }
}

/// One synthetic driver decision.
///
/// `window` must already hold this step's observation (see
/// [`RegressorWindow::observe`]); the caller records the returned steering
/// into the window afterwards. During warm-up the driver steers
/// proportionally to the near-point angle toward its believed lane center.
pub fn synthetic_command<T: Scalar, R: Rng + ?Sized>(
    pose: &Pose<T>,
    believed_center: T,
    geometry: &LaneGeometry<T>,
    coeffs: &SteeringCoefficients<T>,
    window: &RegressorWindow<T>,
    tuning: &DriverTuning<T>,
    rng: &mut R,
) -> DriverCommand<T> {
    let delta = if window.is_warm() {
        let base = dot(&coeffs.to_array(), &window.regressors());
        base + gaussian(tuning.noise_std, rng)
    } else {
        tuning.warmup_gain * visual_angles(pose, believed_center, geometry).phi
    };
    let a = tuning.speed_gain * (tuning.target_speed - pose.v) + gaussian(tuning.accel_noise_std, rng);
    DriverCommand::new(delta, a)
}

/// Draws `N(0, std^2)`; a zero spread draws nothing from the generator.
pub fn gaussian<T: Scalar, R: Rng + ?Sized>(std: T, rng: &mut R) -> T {
    if std == T::zero() {
        return T::zero();
    }
    let normal = Normal::new(0.0, std.as_f64()).expect("finite non-negative spread");
    T::lit(normal.sample(rng))
}
