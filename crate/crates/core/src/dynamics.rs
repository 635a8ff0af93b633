//! Rear-axle kinematic bicycle, its feedback linearization, and the
//! discrete-time lateral/longitudinal plant with a lane-center bias state.
//!
//! Continuous state is a [`Pose`] `(x, y, theta, v)` driven by a
//! [`DriverCommand`] `(delta, a)`:
//!
//! ```text
//! xdot = v cos(theta)   ydot = v sin(theta)   thetadot = v kappa tan(delta)   vdot = a
//! ```
//!
//! The map `[xddot, yddot] = R(v, theta) [a, tan(delta)]` with
//! `R = [[cos, -v^2 kappa sin], [sin, v^2 kappa cos]]` turns acceleration
//! targets into actuator commands and back.

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    /// Longitudinal position (m).
    pub x: T,
    /// Lateral position (m).
    pub y: T,
    /// Heading (rad), kept in (-pi, pi].
    pub theta: T,
    /// Speed (m/s).
    pub v: T,
}

impl<T: Scalar> Pose<T> {
    pub fn new(x: T, y: T, theta: T, v: T) -> Self {
        Self { x, y, theta, v }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }

    /// Longitudinal and lateral velocity `(v cos theta, v sin theta)`.
    pub fn velocity(&self) -> (T, T) {
        (self.v * self.theta.cos(), self.v * self.theta.sin())
    }
}

/// Time derivative of a [`Pose`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRate<T> {
    pub xdot: T,
    pub ydot: T,
    pub thetadot: T,
    pub vdot: T,
}

/// The four-state vector `[xdot, y, ydot, b]` used by the controller and estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState<T> {
    pub xdot: T,
    pub y: T,
    pub ydot: T,
    /// Lane-center bias (m); the camera reads `y + b`.
    pub b: T,
}

impl<T: Scalar> VehicleState<T> {
    pub fn new(xdot: T, y: T, ydot: T, b: T) -> Self {
        Self { xdot, y, ydot, b }
    }

    pub fn to_vector(&self) -> Vector4<T> {
        Vector4::new(self.xdot, self.y, self.ydot, self.b)
    }

    pub fn from_vector(v: &Vector4<T>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.xdot, self.y, self.ydot, self.b]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Heading implied by the velocity components.
    pub fn heading(&self) -> T {
        self.ydot.atan2(self.xdot)
    }

    /// Speed implied by the velocity components.
    pub fn speed(&self) -> T {
        (self.xdot * self.xdot + self.ydot * self.ydot).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriverCommand<T> {
    /// Steering angle (rad).
    pub delta: T,
    /// Longitudinal acceleration (m/s^2).
    pub a: T,
}

impl<T: Scalar> DriverCommand<T> {
    pub fn new(delta: T, a: T) -> Self {
        Self { delta, a }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    /// Clamps to the actuator limits; the flag reports whether anything was clipped.
    pub fn saturate(&self, params: &VehicleParams<T>) -> (Self, bool) {
        let delta = clamp(self.delta, params.delta_max);
        let a = clamp(self.a, params.a_max);
        (Self::new(delta, a), delta != self.delta || a != self.a)
    }
}

fn clamp<T: Scalar>(v: T, limit: T) -> T {
    v.max(-limit).min(limit)
}

/// Plant input `u = [xddot, yddot]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearizedInput<T> {
    pub xddot: T,
    pub yddot: T,
}

impl<T: Scalar> LinearizedInput<T> {
    pub fn new(xddot: T, yddot: T) -> Self {
        Self { xddot, yddot }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn to_vector(&self) -> Vector2<T> {
        Vector2::new(self.xddot, self.yddot)
    }
}

/// Vehicle geometry and actuator limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams<T> {
    /// Inverse wheelbase (1/m).
    pub kappa: T,
    /// Speed floor guarding the `det R = v^2 kappa` singularity (m/s).
    pub v_min: T,
    /// Steering limit (rad).
    pub delta_max: T,
    /// Acceleration limit (m/s^2).
    pub a_max: T,
}

impl<T: Scalar> VehicleParams<T> {
    pub fn from_wheelbase(wheelbase: T) -> Result<Self> {
        if !(wheelbase > T::zero()) {
            return Err(Error::InvalidParameter(format!("wheelbase must be positive, got {wheelbase}")));
        }
        Ok(Self { kappa: T::one() / wheelbase, ..Self::default() })
    }

    pub fn validate(&self) -> Result<()> {
        let half_pi = T::frac_pi_2();
        if !(self.kappa > T::zero()) {
            return Err(Error::InvalidParameter("kappa must be positive".into()));
        }
        if !(self.v_min > T::zero()) {
            return Err(Error::InvalidParameter("v_min must be positive".into()));
        }
        if !(self.delta_max > T::zero() && self.delta_max < half_pi) {
            return Err(Error::InvalidParameter("delta_max must lie in (0, pi/2)".into()));
        }
        if !(self.a_max > T::zero()) {
            return Err(Error::InvalidParameter("a_max must be positive".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for VehicleParams<T> {
    fn default() -> Self {
        Self { kappa: T::one() / T::lit(2.8), v_min: T::lit(0.5), delta_max: T::lit(0.5), a_max: T::lit(5.0) }
    }
}

fn check_steering<T: Scalar>(delta: T) -> Result<()> {
    if !delta.is_finite() || delta.abs() >= T::frac_pi_2() {
        return Err(Error::SingularSteering { delta: delta.as_f64() });
    }
    Ok(())
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle<T: Scalar>(angle: T) -> T {
    let two_pi = T::two_pi();
    let mut a = angle % two_pi;
    if a > T::pi() {
        a -= two_pi;
    } else if a <= -T::pi() {
        a += two_pi;
    }
    a
}

pub fn continuous_derivative<T: Scalar>(pose: &Pose<T>, cmd: &DriverCommand<T>, kappa: T) -> Result<PoseRate<T>> {
    check_steering(cmd.delta)?;
    let (xdot, ydot) = pose.velocity();
    Ok(PoseRate { xdot, ydot, thetadot: pose.v * kappa * cmd.delta.tan(), vdot: cmd.a })
}

/// Advances the pose by `dt` with classical RK4, holding `cmd` constant.
///
/// Speed is floored at `params.v_min` after the step.
pub fn step_continuous<T: Scalar>(
    pose: &Pose<T>,
    cmd: &DriverCommand<T>,
    params: &VehicleParams<T>,
    dt: T,
) -> Result<Pose<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let kappa = params.kappa;
    let half = T::lit(0.5);
    let offset = |p: &Pose<T>, r: &PoseRate<T>, h: T| Pose {
        x: p.x + h * r.xdot,
        y: p.y + h * r.ydot,
        theta: p.theta + h * r.thetadot,
        v: p.v + h * r.vdot,
    };

    let k1 = continuous_derivative(pose, cmd, kappa)?;
    let k2 = continuous_derivative(&offset(pose, &k1, half * dt), cmd, kappa)?;
    let k3 = continuous_derivative(&offset(pose, &k2, half * dt), cmd, kappa)?;
    let k4 = continuous_derivative(&offset(pose, &k3, dt), cmd, kappa)?;

    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let blend = |a: T, b: T, c: T, d: T| sixth * (a + two * b + two * c + d);
    Ok(Pose {
        x: pose.x + blend(k1.xdot, k2.xdot, k3.xdot, k4.xdot),
        y: pose.y + blend(k1.ydot, k2.ydot, k3.ydot, k4.ydot),
        theta: wrap_angle(pose.theta + blend(k1.thetadot, k2.thetadot, k3.thetadot, k4.thetadot)),
        v: (pose.v + blend(k1.vdot, k2.vdot, k3.vdot, k4.vdot)).max(params.v_min),
    })
}

/// Result of inverting the linearizing map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actuation<T> {
    /// Command after clamping to actuator limits.
    pub command: DriverCommand<T>,
    /// Unclamped inverse.
    pub requested: DriverCommand<T>,
    pub saturated: bool,
}

/// Solves `[a, tan(delta)] = R(v, theta)^-1 [xddot, yddot]`.
pub fn feedback_linearize<T: Scalar>(
    pose: &Pose<T>,
    target: &LinearizedInput<T>,
    params: &VehicleParams<T>,
) -> Result<Actuation<T>> {
    if !(pose.v >= params.v_min) {
        return Err(Error::LowSpeed { v: pose.v.as_f64(), v_min: params.v_min.as_f64() });
    }
    if !(target.xddot.is_finite() && target.yddot.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (s, c) = pose.theta.sin_cos();
    let gain = pose.v * pose.v * params.kappa;
    let a = c * target.xddot + s * target.yddot;
    let tan_delta = (c * target.yddot - s * target.xddot) / gain;
    let requested = DriverCommand::new(tan_delta.atan(), a);
    let (command, saturated) = requested.saturate(params);
    Ok(Actuation { command, requested, saturated })
}

/// Evaluates `[xddot, yddot] = R(v, theta) [a, tan(delta)]`.
pub fn apply_linearization<T: Scalar>(pose: &Pose<T>, cmd: &DriverCommand<T>, kappa: T) -> Result<LinearizedInput<T>> {
    check_steering(cmd.delta)?;
    if !cmd.a.is_finite() {
        return Err(Error::NonFinite);
    }
    let (s, c) = pose.theta.sin_cos();
    let gain = pose.v * pose.v * kappa;
    let tan_delta = cmd.delta.tan();
    Ok(LinearizedInput::new(c * cmd.a - gain * s * tan_delta, s * cmd.a + gain * c * tan_delta))
}

/// Discrete plant `xi(k+1) = A xi(k) + B u(k)` with the bias state held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel<T: Scalar> {
    pub a: Matrix4<T>,
    pub b: Matrix4x2<T>,
    pub ts: T,
    pub kappa: T,
}

impl<T: Scalar> PlantModel<T> {
    pub fn new(ts: T, kappa: T) -> Result<Self> {
        if !(ts > T::zero()) {
            return Err(Error::InvalidParameter(format!("sampling time must be positive, got {ts}")));
        }
        if !(kappa > T::zero()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        let zero = T::zero();
        let one = T::one();
        #[rustfmt::skip]
        let a = Matrix4::new(
            one,  zero, zero, zero,
            zero, one,  ts,   zero,
            zero, zero, one,  zero,
            zero, zero, zero, one,
        );
        #[rustfmt::skip]
        let b = Matrix4x2::new(
            ts,   zero,
            zero, ts * ts / T::lit(2.0),
            zero, ts,
            zero, zero,
        );
        Ok(Self { a, b, ts, kappa })
    }

    pub fn step(&self, state: &VehicleState<T>, u: &LinearizedInput<T>) -> VehicleState<T> {
        VehicleState::from_vector(&(self.a * state.to_vector() + self.b * u.to_vector()))
    }

    /// State Jacobian of the transition; constant because the plant is linear.
    pub fn state_jacobian(&self, _state: &VehicleState<T>) -> Matrix4<T> {
        self.a
    }
}

/// Builds the plant for sampling time `ts` with the default wheelbase.
pub fn make_plant<T: Scalar>(ts: T) -> Result<PlantModel<T>> {
    PlantModel::new(ts, VehicleParams::<T>::default().kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params() -> VehicleParams<f64> {
        VehicleParams::from_wheelbase(2.8).unwrap()
    }

    #[test]
    fn derivative_straight_and_axis_aligned() {
        let k = params().kappa;
        let r = continuous_derivative(&Pose::new(0.0, 0.0, 0.0, 15.0), &DriverCommand::zero(), k).unwrap();
        assert_eq!((r.xdot, r.ydot, r.thetadot, r.vdot), (15.0, 0.0, 0.0, 0.0));

        let up = Pose::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, 15.0);
        let r = continuous_derivative(&up, &DriverCommand::new(0.0, 1.0), k).unwrap();
        assert_abs_diff_eq!(r.xdot, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ydot, 15.0, epsilon = 1e-12);
        assert_eq!(r.thetadot, 0.0);
        assert_eq!(r.vdot, 1.0);
    }

    #[test]
    fn yaw_rate_matches_bicycle_formula() {
        let r =
            continuous_derivative(&Pose::new(0.0, 0.0, 0.0, 15.0), &DriverCommand::new(0.1, 0.0), 1.0 / 2.8).unwrap();
        let expected = 15.0 / 2.8 * 0.1f64.tan();
        assert_abs_diff_eq!(r.thetadot, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(r.thetadot, 0.5375, epsilon = 5e-4);
    }

    #[test]
    fn singular_steering_rejected() {
        let err = continuous_derivative(
            &Pose::new(0.0, 0.0, 0.0, 15.0),
            &DriverCommand::new(std::f64::consts::FRAC_PI_2, 0.0),
            0.3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularSteering { .. }));
    }

    #[test]
    fn straight_line_step() {
        let p = step_continuous(&Pose::new(0.0, 0.0, 0.0, 15.0), &DriverCommand::zero(), &params(), 0.1).unwrap();
        assert_abs_diff_eq!(p.x, 1.5, epsilon = 1e-12);
        assert_eq!((p.y, p.theta, p.v), (0.0, 0.0, 15.0));
    }

    #[test]
    fn constant_turn_heading_matches_closed_form() {
        let params = params();
        let cmd = DriverCommand::new(0.1, 0.0);
        let mut pose = Pose::new(0.0, 0.0, 0.0, 15.0);
        for _ in 0..10 {
            pose = step_continuous(&pose, &cmd, &params, 0.1).unwrap();
        }
        // Constant speed and steering: theta(t) = v kappa tan(delta) t.
        let analytic = 15.0 * params.kappa * 0.1f64.tan();
        assert_abs_diff_eq!(pose.theta, analytic, epsilon = 1e-6);
        // Circle of radius R = 1 / (kappa tan delta).
        let radius = 1.0 / (params.kappa * 0.1f64.tan());
        assert_abs_diff_eq!(pose.x, radius * analytic.sin(), epsilon = 1e-4);
        assert_abs_diff_eq!(pose.y, radius * (1.0 - analytic.cos()), epsilon = 1e-4);
    }

    #[test]
    fn step_halving_converges_at_fourth_order() {
        let params = params();
        let cmd = DriverCommand::new(0.2, 1.5);
        let start = Pose::new(0.0, 0.3, 0.1, 12.0);
        let integrate = |h: f64| {
            let n = (1.0 / h).round() as usize;
            (0..n).fold(start, |p, _| step_continuous(&p, &cmd, &params, h).unwrap())
        };
        let coarse = integrate(0.1);
        let mid = integrate(0.05);
        let fine = integrate(0.025);
        let e1 = (coarse.y - mid.y).abs() + (coarse.x - mid.x).abs();
        let e2 = (mid.y - fine.y).abs() + (mid.x - fine.x).abs();
        // Error ratio 2^4 for RK4; allow slack for the higher-order terms.
        assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);
        // Two half steps agree with one full step to the integrator's local order.
        let one = step_continuous(&start, &cmd, &params, 0.01).unwrap();
        let half = step_continuous(&start, &cmd, &params, 0.005).unwrap();
        let two = step_continuous(&half, &cmd, &params, 0.005).unwrap();
        assert!((one.x - two.x).abs() < 1e-8 && (one.y - two.y).abs() < 1e-8);
    }

    #[test]
    fn feedback_linearize_examples() {
        let params = params();
        let pose = Pose::new(0.0, 0.0, 0.0, 15.0);
        let act = feedback_linearize(&pose, &LinearizedInput::new(1.0, 0.0), &params).unwrap();
        assert_abs_diff_eq!(act.command.a, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(act.command.delta, 0.0, epsilon = 1e-15);
        assert!(!act.saturated);

        let act = feedback_linearize(&pose, &LinearizedInput::new(0.0, 2.0), &params).unwrap();
        let expected = (2.0f64 / (225.0 / 2.8)).atan();
        assert_abs_diff_eq!(act.command.delta, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(act.command.delta, 0.02487, epsilon = 2e-5);
    }

    #[test]
    fn feedback_linearize_errors_and_saturation() {
        let params = params();
        let slow = Pose::new(0.0, 0.0, 0.0, 0.1);
        assert!(matches!(
            feedback_linearize(&slow, &LinearizedInput::new(0.0, 1.0), &params),
            Err(Error::LowSpeed { .. })
        ));
        let pose = Pose::new(0.0, 0.0, 0.0, 15.0);
        let act = feedback_linearize(&pose, &LinearizedInput::new(20.0, 200.0), &params).unwrap();
        assert!(act.saturated);
        assert_eq!(act.command.a, params.a_max);
        assert_eq!(act.command.delta, params.delta_max);
        assert!(act.requested.a > params.a_max);
    }

    #[test]
    fn apply_linearization_examples() {
        let k = params().kappa;
        let pose = Pose::new(0.0, 0.0, 0.0, 15.0);
        let u = apply_linearization(&pose, &DriverCommand::zero(), k).unwrap();
        assert_eq!((u.xddot, u.yddot), (0.0, 0.0));

        let u = apply_linearization(&pose, &DriverCommand::new(0.1, 0.0), k).unwrap();
        assert_abs_diff_eq!(u.yddot, 225.0 / 2.8 * 0.1f64.tan(), epsilon = 1e-12);
        assert_abs_diff_eq!(u.yddot, 8.062, epsilon = 1e-3);

        let diag = Pose::new(0.0, 0.0, std::f64::consts::FRAC_PI_4, 15.0);
        let u = apply_linearization(&diag, &DriverCommand::new(0.0, 1.0), k).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(u.xddot, h, epsilon = 1e-15);
        assert_abs_diff_eq!(u.yddot, h, epsilon = 1e-15);
    }

    #[test]
    fn round_trip_at_nonzero_heading() {
        let params = params();
        let pose = Pose::new(0.0, 0.0, 0.2, 15.0);
        let target = LinearizedInput::new(0.7, -1.3);
        let act = feedback_linearize(&pose, &target, &params).unwrap();
        let back = apply_linearization(&pose, &act.command, params.kappa).unwrap();
        assert_abs_diff_eq!(back.xddot, target.xddot, epsilon = 1e-9);
        assert_abs_diff_eq!(back.yddot, target.yddot, epsilon = 1e-9);
    }

    #[test]
    fn plant_matrices() {
        let plant = make_plant(0.1).unwrap();
        assert_eq!(plant.b[(0, 0)], 0.1);
        assert_abs_diff_eq!(plant.b[(1, 1)], 0.005, epsilon = 1e-18);
        assert_eq!(plant.b[(2, 1)], 0.1);
        assert_eq!(plant.b.row(3).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert!(PlantModel::new(0.0, 0.3).is_err());
    }

    #[test]
    fn plant_step_examples() {
        let plant = make_plant(0.1).unwrap();
        let xi = VehicleState::new(15.0, -0.5, 0.0, 0.0);
        assert_eq!(plant.step(&xi, &LinearizedInput::zero()), xi);
        let next = plant.step(&xi, &LinearizedInput::new(0.0, 1.0));
        assert_abs_diff_eq!(next.xdot, 15.0);
        assert_abs_diff_eq!(next.y, -0.495, epsilon = 1e-15);
        assert_abs_diff_eq!(next.ydot, 0.1, epsilon = 1e-15);
        assert_eq!(next.b, 0.0);
    }

    #[test]
    fn discrete_lateral_motion_is_exact_for_constant_acceleration() {
        // Zero-order-hold double integrator: y(n Ts) = y0 + vy0 t + yddot t^2 / 2.
        for ts in [0.2f64, 0.1, 0.05] {
            let plant = make_plant(ts).unwrap();
            let u = LinearizedInput::new(0.0, 0.8);
            let n = (2.0 / ts).round() as usize;
            let end = (0..n).fold(VehicleState::new(15.0, 0.1, 0.3, 0.0), |s, _| plant.step(&s, &u));
            let t = n as f64 * ts;
            assert_abs_diff_eq!(end.y, 0.1 + 0.3 * t + 0.4 * t * t, epsilon = 1e-10);
        }
    }

    #[test]
    fn f32_plant_builds() {
        let plant = make_plant(0.1f32).unwrap();
        assert!((plant.b[(1, 1)] - 0.005).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn bias_is_invariant(b in -5.0..5.0f64, us in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..50)) {
            let plant = make_plant(0.1).unwrap();
            let mut s = VehicleState::new(15.0, 0.0, 0.0, b);
            for (ux, uy) in us {
                s = plant.step(&s, &LinearizedInput::new(ux, uy));
                prop_assert_eq!(s.b, b);
            }
        }

        #[test]
        fn linearization_round_trip(theta in -3.0..3.0f64, v in 0.5..40.0f64, xdd in -3.0..3.0f64, ydd in -3.0..3.0f64) {
            let params = VehicleParams { delta_max: 1.5, a_max: 1e6, ..params() };
            let pose = Pose::new(0.0, 0.0, theta, v);
            let act = feedback_linearize(&pose, &LinearizedInput::new(xdd, ydd), &params).unwrap();
            prop_assume!(!act.saturated);
            let back = apply_linearization(&pose, &act.command, params.kappa).unwrap();
            prop_assert!((back.xddot - xdd).abs() < 1e-9);
            prop_assert!((back.yddot - ydd).abs() < 1e-9);
        }

        #[test]
        fn integration_is_deterministic(delta in -0.4..0.4f64, a in -2.0..2.0f64) {
            let params = params();
            let cmd = DriverCommand::new(delta, a);
            let run = || (0..50).fold(Pose::new(0.0, 0.0, 0.0, 15.0), |p, _| step_continuous(&p, &cmd, &params, 0.1).unwrap());
            let (p1, p2) = (run(), run());
            prop_assert_eq!(p1.x.to_bits(), p2.x.to_bits());
            prop_assert_eq!(p1.y.to_bits(), p2.y.to_bits());
            prop_assert_eq!(p1.theta.to_bits(), p2.theta.to_bits());
        }
    }
}
