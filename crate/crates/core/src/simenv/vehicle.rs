//! Nonlinear single-track vehicle model with Magic Formula lateral tire forces.
//!
//! State: longitudinal speed `v_x`, lateral speed `v_y`, yaw rate `omega_z`,
//! global position `(x, y)`, yaw `psi` and front steering angle `delta`.
//! Inputs: longitudinal acceleration `a_x` and steering rate `delta_dot`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;

/// Magic Formula shape coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagicFormula {
    pub b: f64,
    pub c: f64,
    pub e: f64,
}

impl Default for MagicFormula {
    fn default() -> Self {
        Self {
            b: 10.0,
            c: 1.9,
            e: 0.97,
        }
    }
}

impl MagicFormula {
    /// `peak * sin(C atan(Bα − E(Bα − atan(Bα))))`
    pub fn force(&self, peak: f64, slip: f64) -> f64 {
        let b_slip = self.b * slip;
        let inner = b_slip - self.e * (b_slip - b_slip.atan());
        peak * (self.c * inner.atan()).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// kg·m²
    pub yaw_inertia: f64,
    /// CG to front axle, m
    pub front_axle: f64,
    /// CG to rear axle, m
    pub rear_axle: f64,
    /// Road friction coefficient.
    pub friction: f64,
    pub tire: MagicFormula,
    pub max_steer: f64,
    pub max_steer_rate: f64,
    pub max_accel: f64,
    /// Floor applied to `v_x` inside the slip-angle computation only.
    pub min_slip_speed: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1800.0,
            yaw_inertia: 3270.0,
            front_axle: 1.2,
            rear_axle: 1.65,
            friction: 1.0,
            tire: MagicFormula::default(),
            max_steer: 0.573,
            max_steer_rate: 0.927,
            max_accel: 5.0,
            min_slip_speed: 0.5,
        }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.front_axle + self.rear_axle
    }

    /// Peak lateral force of the front tire, `μ m g a / (a + b)`.
    pub fn front_peak_force(&self) -> f64 {
        self.friction * self.mass * GRAVITY * self.front_axle / self.wheelbase()
    }

    /// Peak lateral force of the rear tire, `μ m g b / (a + b)`.
    pub fn rear_peak_force(&self) -> f64 {
        self.friction * self.mass * GRAVITY * self.rear_axle / self.wheelbase()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub v_x: f64,
    pub v_y: f64,
    pub omega_z: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub delta: f64,
}

impl VehicleState {
    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.v_x,
            self.v_y,
            self.omega_z,
            self.x,
            self.y,
            self.psi,
            self.delta,
        ]
    }

    pub fn from_array(s: [f64; 7]) -> Self {
        Self {
            v_x: s[0],
            v_y: s[1],
            omega_z: s[2],
            x: s[3],
            y: s[4],
            psi: s[5],
            delta: s[6],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlAction {
    /// Longitudinal acceleration, m/s².
    pub a_x: f64,
    /// Steering rate, rad/s.
    pub delta_dot: f64,
}

impl ControlAction {
    pub fn new(a_x: f64, delta_dot: f64) -> Self {
        Self { a_x, delta_dot }
    }

    /// Clamp to the actuator limits of `params`.
    pub fn clamped(&self, params: &VehicleParams) -> Self {
        Self {
            a_x: self.a_x.clamp(-params.max_accel, params.max_accel),
            delta_dot: self
                .delta_dot
                .clamp(-params.max_steer_rate, params.max_steer_rate),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a_x.is_finite() && self.delta_dot.is_finite()
    }
}

/// Slip angles and lateral tire forces at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TireForces {
    pub front_slip: f64,
    pub rear_slip: f64,
    pub front: f64,
    pub rear: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleModel {
    pub params: VehicleParams,
}

impl VehicleModel {
    pub fn new(params: VehicleParams) -> Self {
        Self { params }
    }

    pub fn tire_forces(&self, s: &VehicleState) -> TireForces {
        let p = &self.params;
        let vx = s.v_x.max(p.min_slip_speed);
        let front_slip = s.delta - (s.v_y + p.front_axle * s.omega_z).atan2(vx);
        let rear_slip = -(s.v_y - p.rear_axle * s.omega_z).atan2(vx);
        TireForces {
            front_slip,
            rear_slip,
            front: p.tire.force(p.front_peak_force(), front_slip),
            rear: p.tire.force(p.rear_peak_force(), rear_slip),
        }
    }

    /// Time derivative of the state under an already-clamped action.
    pub fn derivatives(&self, s: &VehicleState, u: &ControlAction) -> [f64; 7] {
        let p = &self.params;
        let tires = self.tire_forces(s);
        let cos_delta = s.delta.cos();
        // Braking stops the vehicle; it never reverses.
        let v_x_dot = if s.v_x <= 0.0 && u.a_x < 0.0 {
            0.0
        } else {
            u.a_x
        };
        let v_y_dot = -s.v_x * s.omega_z + (tires.front * cos_delta + tires.rear) / p.mass;
        let omega_dot =
            (p.front_axle * tires.front * cos_delta - p.rear_axle * tires.rear) / p.yaw_inertia;
        let (sin_psi, cos_psi) = s.psi.sin_cos();
        let steer_dot = if (s.delta >= p.max_steer && u.delta_dot > 0.0)
            || (s.delta <= -p.max_steer && u.delta_dot < 0.0)
        {
            0.0
        } else {
            u.delta_dot
        };
        [
            v_x_dot,
            v_y_dot,
            omega_dot,
            s.v_x * cos_psi - s.v_y * sin_psi,
            s.v_x * sin_psi + s.v_y * cos_psi,
            s.omega_z,
            steer_dot,
        ]
    }

    /// Upper bound on the magnitude of the stiff lateral eigenvalues.
    fn stiffness_bound(&self, s: &VehicleState) -> f64 {
        let p = &self.params;
        let vx = s.v_x.max(p.min_slip_speed);
        let slope = p.tire.b * p.tire.c;
        let cf = slope * p.front_peak_force();
        let cr = slope * p.rear_peak_force();
        (cf + cr) / (p.mass * vx)
            + (p.front_axle.powi(2) * cf + p.rear_axle.powi(2) * cr) / (p.yaw_inertia * vx)
    }

    /// Number of RK4 sub-steps used to integrate over `dt` from `s`.
    pub fn substeps(&self, s: &VehicleState, dt: f64) -> usize {
        let stiff = (dt * self.stiffness_bound(s) / 1.5).ceil();
        let fine = (dt / 0.01).ceil();
        stiff.max(fine).clamp(1.0, 10_000.0) as usize
    }

    /// Integrate the model over `dt` seconds with the action held constant.
    ///
    /// The action is clamped to the actuator limits; the steering angle stays
    /// within `±max_steer`. A non-finite input or result is a divergence.
    pub fn step(
        &self,
        state: &VehicleState,
        action: &ControlAction,
        dt: f64,
    ) -> Result<VehicleState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if !state.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite vehicle state {state:?}"
            )));
        }
        if !action.is_finite() {
            return Err(Error::Divergence(format!("non-finite action {action:?}")));
        }
        let u = action.clamped(&self.params);
        let n = self.substeps(state, dt);
        let h = dt / n as f64;
        let mut s = *state;
        for _ in 0..n {
            s = self.rk4(&s, &u, h);
            s.delta = s.delta.clamp(-self.params.max_steer, self.params.max_steer);
            if s.v_x < 0.0 {
                s.v_x = 0.0;
            }
        }
        if !s.is_finite() {
            return Err(Error::Divergence(format!("integration produced {s:?}")));
        }
        Ok(s)
    }

    fn rk4(&self, s: &VehicleState, u: &ControlAction, h: f64) -> VehicleState {
        let x0 = s.to_array();
        let offset = |k: &[f64; 7], scale: f64| {
            let mut out = x0;
            for i in 0..7 {
                out[i] += scale * k[i];
            }
            VehicleState::from_array(out)
        };
        let k1 = self.derivatives(s, u);
        let k2 = self.derivatives(&offset(&k1, 0.5 * h), u);
        let k3 = self.derivatives(&offset(&k2, 0.5 * h), u);
        let k4 = self.derivatives(&offset(&k3, h), u);
        let mut out = x0;
        for i in 0..7 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        VehicleState::from_array(out)
    }
}

/// Step the default vehicle.
pub fn step(state: &VehicleState, action: &ControlAction, dt: f64) -> Result<VehicleState> {
    VehicleModel::default().step(state, action, dt)
}
