//! Kinematic bicycle model and its small-angle linearization.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::types::{ControlInput, VehicleParams, VehicleState, CONTROL_DIM, STATE_DIM};

/// Slip angle of the velocity at the center of gravity for a front steering angle.
pub fn slip_angle(steer: f64, p: &VehicleParams) -> f64 {
    (p.l_r / p.wheelbase() * steer.tan()).atan()
}

/// Continuous-time derivative `(s', v', y', psi')` of the nonlinear bicycle model.
pub fn bicycle_derivative(x: &VehicleState, u: &ControlInput, p: &VehicleParams) -> Result<[f64; STATE_DIM]> {
    if !(u.steer.abs() < FRAC_PI_2) {
        return Err(Error::Domain(format!("steering angle {} outside (-pi/2, pi/2)", u.steer)));
    }
    let phi = slip_angle(u.steer, p);
    Ok([
        x.v * (x.psi + phi).cos(),
        u.accel,
        x.v * (x.psi + phi).sin(),
        x.v / p.l_r * phi.sin(),
    ])
}

/// One RK4 step of the nonlinear model, holding `u` constant over `dt`.
pub fn rk4_step(x: &VehicleState, u: &ControlInput, p: &VehicleParams, dt: f64) -> Result<VehicleState> {
    let add = |x: &VehicleState, k: &[f64; STATE_DIM], h: f64| {
        VehicleState::new(x.s + h * k[0], x.v + h * k[1], x.y + h * k[2], x.psi + h * k[3])
    };
    let k1 = bicycle_derivative(x, u, p)?;
    let k2 = bicycle_derivative(&add(x, &k1, dt / 2.0), u, p)?;
    let k3 = bicycle_derivative(&add(x, &k2, dt / 2.0), u, p)?;
    let k4 = bicycle_derivative(&add(x, &k3, dt), u, p)?;
    let mut d = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        d[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    Ok(add(x, &d, dt))
}

/// Linear model `x' = A x + B u` around straight driving at `v_lin`.
///
/// `A` has `A[0][1] = 1` and `A[2][3] = v_lin`; `B` has `B[1][0] = 1` and
/// `B[3][1] = v_lin / (l_r + l_f)`. Every other entry is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedVehicle {
    pub a: [[f64; STATE_DIM]; STATE_DIM],
    pub b: [[f64; CONTROL_DIM]; STATE_DIM],
    pub v_lin: f64,
}

pub fn linearize(v_lin: f64, p: &VehicleParams) -> LinearizedVehicle {
    let mut a = [[0.0; STATE_DIM]; STATE_DIM];
    let mut b = [[0.0; CONTROL_DIM]; STATE_DIM];
    a[0][1] = 1.0;
    a[2][3] = v_lin;
    b[1][0] = 1.0;
    b[3][1] = v_lin / p.wheelbase();
    LinearizedVehicle { a, b, v_lin }
}

impl LinearizedVehicle {
    /// Discrete state matrix `A dt + I`.
    pub fn discrete_a(&self, dt: f64) -> [[f64; STATE_DIM]; STATE_DIM] {
        let mut m = self.a;
        for (i, row) in m.iter_mut().enumerate() {
            for x in row.iter_mut() {
                *x *= dt;
            }
            row[i] += 1.0;
        }
        m
    }

    /// Discrete input matrix `B dt`.
    pub fn discrete_b(&self, dt: f64) -> [[f64; CONTROL_DIM]; STATE_DIM] {
        self.b.map(|row| row.map(|x| x * dt))
    }
}

/// Forward-Euler step of the linear model: `x' = (A dt + I) x + B dt u`.
pub fn discrete_step(x: &VehicleState, u: &ControlInput, lin: &LinearizedVehicle, dt: f64) -> VehicleState {
    let ad = lin.discrete_a(dt);
    let bd = lin.discrete_b(dt);
    let xv = x.to_array();
    let uv = u.to_array();
    let mut out = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = (0..STATE_DIM).map(|j| ad[i][j] * xv[j]).sum::<f64>()
            + (0..CONTROL_DIM).map(|j| bd[i][j] * uv[j]).sum::<f64>();
    }
    VehicleState::from_array(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(l_r: f64, l_f: f64) -> VehicleParams {
        VehicleParams {
            l_f,
            l_r,
            ..VehicleParams::default()
        }
    }

    #[test]
    fn derivative_examples() {
        let p = params(1.5, 1.5);
        let x = VehicleState::new(0.0, 10.0, 0.0, 0.0);
        assert_eq!(bicycle_derivative(&x, &ControlInput::new(0.0, 0.0), &p).unwrap(), [10.0, 0.0, 0.0, 0.0]);
        assert_eq!(bicycle_derivative(&x, &ControlInput::new(2.0, 0.0), &p).unwrap(), [10.0, 2.0, 0.0, 0.0]);
        // phi = atan(0.5 tan 0.1); psi' = (10 / 1.5) sin(phi)
        let d = bicycle_derivative(&x, &ControlInput::new(0.0, 0.1), &p).unwrap();
        assert_abs_diff_eq!(d[3], 0.334_028_835_6, epsilon = 1e-9);
        assert!(bicycle_derivative(&x, &ControlInput::new(0.0, FRAC_PI_2), &p).is_err());
    }

    #[test]
    fn linearize_examples() {
        let lin = linearize(10.0, &params(1.5, 1.5));
        assert_eq!(lin.a[2][3], 10.0);
        assert_abs_diff_eq!(lin.b[3][1], 10.0 / 3.0, epsilon = 1e-15);
        let nonzero_a: usize = lin.a.iter().flatten().filter(|x| **x != 0.0).count();
        let nonzero_b: usize = lin.b.iter().flatten().filter(|x| **x != 0.0).count();
        assert_eq!((nonzero_a, nonzero_b), (2, 2));

        let still = linearize(0.0, &params(1.5, 1.5));
        assert_eq!(still.a[2][3], 0.0);
        assert_eq!(still.b[3][1], 0.0);

        assert_abs_diff_eq!(linearize(25.0, &params(1.2, 1.8)).b[3][1], 25.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn discrete_step_examples() {
        let p = params(1.5, 1.5);
        let lin = linearize(10.0, &p);
        let x = VehicleState::new(0.0, 10.0, 0.0, 0.0);
        let next = discrete_step(&x, &ControlInput::ZERO, &lin, 0.1);
        assert_eq!(next, VehicleState::new(1.0, 10.0, 0.0, 0.0));

        let turned = discrete_step(&VehicleState::new(0.0, 10.0, 0.0, 0.1), &ControlInput::ZERO, &lin, 0.1);
        assert_abs_diff_eq!(turned.y, 0.1, epsilon = 1e-15);

        let faster = discrete_step(&x, &ControlInput::new(1.0, 0.0), &lin, 0.1);
        assert_abs_diff_eq!(faster.v, 10.1, epsilon = 1e-15);
    }

    /// Central finite-difference Jacobians of the nonlinear model at (psi = 0, steer = 0).
    fn jacobians(v: f64, p: &VehicleParams) -> ([[f64; 4]; 4], [[f64; 2]; 4]) {
        let h = 1e-6;
        let x0 = [3.0, v, 0.5, 0.0];
        let u0 = [0.2, 0.0];
        let f = |x: [f64; 4], u: [f64; 2]| {
            bicycle_derivative(&VehicleState::from_array(x), &ControlInput::new(u[0], u[1]), p).unwrap()
        };
        let mut ja = [[0.0; 4]; 4];
        let mut jb = [[0.0; 2]; 4];
        for j in 0..4 {
            let (mut xp, mut xm) = (x0, x0);
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (f(xp, u0), f(xm, u0));
            for i in 0..4 {
                ja[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        for j in 0..2 {
            let (mut up, mut um) = (u0, u0);
            up[j] += h;
            um[j] -= h;
            let (fp, fm) = (f(x0, up), f(x0, um));
            for i in 0..4 {
                jb[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        (ja, jb)
    }

    #[test]
    fn linearization_matches_finite_difference_jacobian() {
        for &(v, l_r, l_f) in &[(10.0, 1.5, 1.5), (25.0, 1.2, 1.8), (3.0, 1.1, 1.6)] {
            let p = params(l_r, l_f);
            let lin = linearize(v, &p);
            let (ja, jb) = jacobians(v, &p);
            for i in 0..4 {
                for j in 0..4 {
                    assert_abs_diff_eq!(lin.a[i][j], ja[i][j], epsilon = 1e-8);
                }
            }
            // The small-angle model drops the slip contribution to lateral velocity,
            // dy'/d(steer) = v l_r / (l_r + l_f); every other input entry matches.
            for i in [0, 1, 3] {
                for j in 0..2 {
                    assert_abs_diff_eq!(lin.b[i][j], jb[i][j], epsilon = 1e-8);
                }
            }
            assert_abs_diff_eq!(jb[2][1], v * l_r / (l_r + l_f), epsilon = 1e-6);
        }
    }

    fn max_err(a: &VehicleState, b: &VehicleState) -> f64 {
        a.to_array()
            .iter()
            .zip(b.to_array())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn euler_step_converges_quadratically_without_steering() {
        let p = params(1.4, 1.4);
        let x = VehicleState::new(0.0, 15.0, 0.2, 0.001);
        let u = ControlInput::new(0.8, 0.0);
        let lin = linearize(x.v, &p);
        let mut errs = Vec::new();
        for dt in [0.1, 0.05, 0.025] {
            let exact = rk4_step(&x, &u, &p, dt).unwrap();
            let approx = discrete_step(&x, &u, &lin, dt);
            let e = max_err(&exact, &approx);
            assert!(e < 0.5 * dt * dt, "dt={dt} err={e}");
            errs.push(e);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn small_steering_error_bounded_by_slip_term() {
        let p = params(1.4, 1.4);
        let x = VehicleState::new(0.0, 15.0, 0.0, 0.0);
        for steer in [-0.05, 0.02, 0.05] {
            let u = ControlInput::new(0.5, steer);
            let lin = linearize(x.v, &p);
            for dt in [0.1, 0.05] {
                let exact = rk4_step(&x, &u, &p, dt).unwrap();
                let approx = discrete_step(&x, &u, &lin, dt);
                // Leading terms the linear model omits: v phi dt + v psi' dt^2 / 2.
                let phi = slip_angle(steer, &p);
                let yaw_rate = x.v / p.l_r * phi.sin();
                let bound = x.v * phi.abs() * dt + x.v * yaw_rate.abs() * dt * dt;
                assert!((exact.y - approx.y).abs() <= bound);
                for (e, a) in [(exact.s, approx.s), (exact.v, approx.v), (exact.psi, approx.psi)] {
                    assert!((e - a).abs() < 0.5 * dt * dt);
                }
            }
        }
    }

    #[test]
    fn zero_input_moves_only_s() {
        let p = VehicleParams::default();
        for v in [0.0, 3.3, 27.1] {
            let x = VehicleState::new(12.5, v, -1.75, 0.0);
            let next = discrete_step(&x, &ControlInput::ZERO, &linearize(v, &p), 0.1);
            assert_eq!(next.s, x.s + v * 0.1);
            assert_eq!((next.v, next.y, next.psi), (x.v, x.y, x.psi));
        }
    }
}
