//! Proportional-derivative reference tracking for the autonomy-in-control mode.

use nalgebra::{Matrix2, Matrix2x4, Matrix4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{LinearizedInput, PlantModel, VehicleState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference<T> {
    pub xdot_d: T,
    pub y_d: T,
    pub ydot_d: T,
}

impl<T: Scalar> Reference<T> {
    pub fn new(xdot_d: T, y_d: T, ydot_d: T) -> Self {
        Self { xdot_d, y_d, ydot_d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSet<T> {
    pub k_xdot: T,
    pub k_y: T,
    pub k_ydot: T,
}

impl<T: Scalar> GainSet<T> {
    pub fn new(k_xdot: T, k_y: T, k_ydot: T) -> Self {
        Self { k_xdot, k_y, k_ydot }
    }

    pub fn unit() -> Self {
        Self::new(T::one(), T::one(), T::one())
    }

    /// Builds the gain set and checks that it stabilizes `plant`.
    pub fn stabilizing(k_xdot: T, k_y: T, k_ydot: T, plant: &PlantModel<T>) -> Result<Self> {
        let gains = Self::new(k_xdot, k_y, k_ydot);
        closed_loop_matrix(plant, &gains)?;
        Ok(gains)
    }

    /// `K` padded with a zero column on the bias state.
    pub fn matrix(&self) -> Matrix2x4<T> {
        let z = T::zero();
        #[rustfmt::skip]
        let k = Matrix2x4::new(
            self.k_xdot, z,        z,           z,
            z,           self.k_y, self.k_ydot, z,
        );
        k
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self::new(self.k_xdot * factor, self.k_y * factor, self.k_ydot * factor)
    }
}

/// `u1 = k_xdot (xdot_d - xi1)`, `u2 = k_y (y_d - xi2) + k_ydot (ydot_d - xi3)`.
///
/// The bias estimate is never fed back.
pub fn control<T: Scalar>(state: &VehicleState<T>, reference: &Reference<T>, gains: &GainSet<T>) -> LinearizedInput<T> {
    LinearizedInput::new(
        gains.k_xdot * (reference.xdot_d - state.xdot),
        gains.k_y * (reference.y_d - state.y) + gains.k_ydot * (reference.ydot_d - state.ydot),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop<T: Scalar> {
    /// `A - B K`.
    pub matrix: Matrix4<T>,
    /// Spectral radius over the controlled states `(xdot, y, ydot)`.
    pub spectral_radius: T,
}

/// Forms `A - B K` and checks stability of the controlled block.
///
/// The bias row of `A - B K` is `[0, 0, 0, 1]` for every gain set, so the
/// bias mode always has eigenvalue 1; stability is judged on the remaining
/// longitudinal (1x1) and lateral (2x2) blocks.
pub fn closed_loop_matrix<T: Scalar>(plant: &PlantModel<T>, gains: &GainSet<T>) -> Result<ClosedLoop<T>> {
    let matrix = plant.a - plant.b * gains.matrix();
    let longitudinal = matrix[(0, 0)].abs();
    let lateral = Matrix2::new(matrix[(1, 1)], matrix[(1, 2)], matrix[(2, 1)], matrix[(2, 2)]);
    let spectral_radius = longitudinal.max(spectral_radius_2x2(&lateral));
    if !(spectral_radius < T::one()) {
        return Err(Error::Unstable { spectral_radius: spectral_radius.as_f64() });
    }
    Ok(ClosedLoop { matrix, spectral_radius })
}

/// Largest eigenvalue modulus of a real 2x2 matrix from its trace and determinant.
pub fn spectral_radius_2x2<T: Scalar>(m: &Matrix2<T>) -> T {
    let half_trace = (m[(0, 0)] + m[(1, 1)]) / T::lit(2.0);
    let det = m.determinant();
    let disc = half_trace * half_trace - det;
    if disc >= T::zero() {
        let root = disc.sqrt();
        (half_trace + root).abs().max((half_trace - root).abs())
    } else {
        // Complex pair: |lambda|^2 = det.
        det.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::make_plant;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_error_gives_zero_input() {
        let s = VehicleState::new(15.0, 0.2, -0.1, 0.7);
        let u = control(&s, &Reference::new(15.0, 0.2, -0.1), &GainSet::unit());
        assert_eq!(u, LinearizedInput::zero());
    }

    #[test]
    fn unit_gain_example() {
        let s = VehicleState::new(14.0, -0.5, 0.0, 0.0);
        let u = control(&s, &Reference::new(15.0, 0.0, 0.0), &GainSet::unit());
        assert_eq!((u.xddot, u.yddot), (1.0, 0.5));
        let u2 = control(&s, &Reference::new(15.0, 0.0, 0.0), &GainSet::unit().scaled(2.0));
        assert_eq!((u2.xddot, u2.yddot), (2.0, 1.0));
    }

    #[test]
    fn bias_does_not_reach_control() {
        let r = Reference::new(15.0, 0.0, 0.0);
        let g = GainSet::new(0.7, 1.3, 0.4);
        let a = control(&VehicleState::new(14.0, 0.3, 0.1, 0.0), &r, &g);
        let b = control(&VehicleState::new(14.0, 0.3, 0.1, -1.8), &r, &g);
        assert_eq!(a, b);
    }

    #[test]
    fn closed_loop_unit_gains() {
        let plant = make_plant(0.1).unwrap();
        let cl = closed_loop_matrix(&plant, &GainSet::unit()).unwrap();
        assert_abs_diff_eq!(cl.matrix[(0, 0)], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(cl.matrix[(1, 1)], 0.995, epsilon = 1e-15);
        assert_abs_diff_eq!(cl.matrix[(1, 2)], 0.095, epsilon = 1e-15);
        assert_abs_diff_eq!(cl.matrix[(2, 1)], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(cl.matrix[(2, 2)], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(cl.matrix[(3, 3)], 1.0);
        assert_abs_diff_eq!(cl.spectral_radius, 0.905f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn zero_gains_are_marginal() {
        let plant = make_plant(0.1).unwrap();
        let err = closed_loop_matrix(&plant, &GainSet::new(0.0, 0.0, 0.0)).unwrap_err();
        assert_eq!(err, Error::Unstable { spectral_radius: 1.0 });
        assert!(GainSet::stabilizing(0.0, 0.0, 0.0, &plant).is_err());
        assert!(GainSet::stabilizing(1.0, 1.0, 1.0, &plant).is_ok());
    }

    #[test]
    fn spectral_radius_real_roots() {
        let m = Matrix2::new(0.5, 0.0, 0.0, -0.8);
        assert_abs_diff_eq!(spectral_radius_2x2(&m), 0.8, epsilon = 1e-15);
    }

    proptest! {
        // Substituting the control law into the plant reproduces (A - BK) xi + BK xi_d.
        #[test]
        fn control_law_matches_closed_loop_form(
            x in prop::array::uniform4(-5.0..5.0f64),
            r in prop::array::uniform3(-5.0..5.0f64),
            g in prop::array::uniform3(0.0..3.0f64),
        ) {
            let plant = make_plant(0.1).unwrap();
            let gains = GainSet::new(g[0], g[1], g[2]);
            let state = VehicleState::from_array(x);
            let reference = Reference::new(r[0], r[1], r[2]);
            let direct = plant.step(&state, &control(&state, &reference, &gains));

            let k = gains.matrix();
            let xi_d = nalgebra::Vector4::new(r[0], r[1], r[2], 0.0);
            let closed = (plant.a - plant.b * k) * state.to_vector() + plant.b * k * xi_d;
            for i in 0..4 {
                prop_assert!((direct.to_vector()[i] - closed[i]).abs() < 1e-12);
            }
        }
    }
}
