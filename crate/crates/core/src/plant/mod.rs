//! Deterministic fixed-step physics of the two-motor unit: rotor mechanics,
//! stator heating, pack discharge and the acoustic field at the microphone.

pub mod models;
pub mod params;

use thiserror::Error;

use crate::scalar::Scalar;
pub use models::{
    applied_torque, battery_step, cable_tension, cogging_torque, command_for_torque, copper_loss,
    electrical_power, sound_level, thermal_step, BatteryStep, TorqueOutput,
};
pub use params::{
    kt_from_kv, AcousticParams, BatteryParams, FixtureParams, MotorParams, PlantParams,
    ThermalParams,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invalid plant configuration: {0}")]
    Config(&'static str),
    #[error("non-finite {quantity} on motor {motor} at t={time}s (value {value})")]
    NonFinite {
        motor: u8,
        quantity: &'static str,
        value: f64,
        time: f64,
    },
}

/// Mechanical load attached to the rotors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load<T> {
    /// Nothing attached; pulleys removed.
    Free,
    /// Rotors held by a cable anchored to a load cell (stall).
    Blocked,
    /// Each motor lifts `mass` kg over a redirect pulley.
    HangingMass { mass: T },
    /// Both pulleys joined by one cable through a redirect pulley.
    CoupledCable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorState<T> {
    pub position: T,
    pub velocity: T,
    pub applied_torque: T,
    pub stator_temp: T,
    /// Last command exceeded the peak torque.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState<T> {
    pub motors: [MotorState<T>; 2],
    pub fans_on: bool,
    pub soc: T,
    pub pack_voltage: T,
    pub step_count: u64,
    pub sim_time: f64,
}

impl<T: Scalar> PlantState<T> {
    pub fn at_rest(params: &PlantParams<T>) -> Self {
        let motor = MotorState {
            position: T::zero(),
            velocity: T::zero(),
            applied_torque: T::zero(),
            stator_temp: params.thermal.ambient,
            saturated: false,
        };
        Self {
            motors: [motor; 2],
            fans_on: true,
            soc: T::one(),
            pack_voltage: params.battery.full_voltage,
            step_count: 0,
            sim_time: 0.0,
        }
    }

    pub fn kinetic_energy(&self, params: &PlantParams<T>) -> T {
        (0..2)
            .map(|i| {
                let w = self.motors[i].velocity;
                T::lit(0.5) * params.motor(i).rotor_inertia * w * w
            })
            .sum()
    }
}

/// Cable tension of the coupled fixture; positive rotation of either motor reels cable in.
fn coupled_tension<T: Scalar>(state: &PlantState<T>, fixture: &FixtureParams<T>) -> T {
    let r = fixture.pulley_radius;
    let stretch = r * (state.motors[0].position + state.motors[1].position);
    if stretch <= T::zero() {
        return T::zero();
    }
    let rate = r * (state.motors[0].velocity + state.motors[1].velocity);
    (fixture.cable_stiffness * stretch + fixture.cable_damping * rate).max(T::zero())
}

/// External torque opposing positive rotation, extra reflected inertia, and
/// extra Coulomb friction for each motor.
fn load_terms<T: Scalar>(
    state: &PlantState<T>,
    load: &Load<T>,
    fixture: &FixtureParams<T>,
) -> [(T, T, T); 2] {
    let r = fixture.pulley_radius;
    match *load {
        Load::Free | Load::Blocked => [(T::zero(), T::zero(), T::zero()); 2],
        Load::HangingMass { mass } => {
            let weight_torque = mass * fixture.gravity * r;
            let term = (
                weight_torque,
                mass * r * r,
                fixture.redirect_friction * weight_torque,
            );
            [term; 2]
        }
        Load::CoupledCable => {
            let torque = coupled_tension(state, fixture) * r;
            let term = (torque, T::zero(), fixture.redirect_friction * torque);
            [term; 2]
        }
    }
}

/// One semi-implicit Euler step of `J·ω̇ = τ_applied + τ_cog(θ) − c·ω − τ_load`.
///
/// `torque_commands` are the drive outputs after mode resolution; the torque
/// map is applied here. Coulomb terms (stiction and redirect friction) stick
/// the rotor when the remaining torque cannot overcome them.
pub fn step_mechanics<T: Scalar>(
    state: &PlantState<T>,
    torque_commands: [T; 2],
    load: &Load<T>,
    params: &PlantParams<T>,
    dt: T,
) -> Result<PlantState<T>, PlantError> {
    let mut next = state.clone();
    let loads = load_terms(state, load, &params.fixture);
    let time = state.sim_time;
    for i in 0..2 {
        let mp = params.motor(i);
        let cur = &state.motors[i];
        let out = applied_torque(torque_commands[i], mp);
        let m = &mut next.motors[i];
        m.applied_torque = out.torque;
        m.saturated = out.saturated;
        if matches!(load, Load::Blocked) {
            m.velocity = T::zero();
            continue;
        }
        let (load_torque, extra_inertia, extra_coulomb) = loads[i];
        let inertia = mp.rotor_inertia + extra_inertia;
        let coulomb = mp.stiction + extra_coulomb;
        let drive = out.torque + cogging_torque(cur.position, mp)
            - mp.viscous_friction * cur.velocity
            - load_torque;
        let w = cur.velocity;
        let new_w = if w == T::zero() && drive.abs() <= coulomb {
            T::zero()
        } else {
            let direction = if w != T::zero() {
                w.signum0()
            } else {
                drive.signum0()
            };
            let candidate = w + dt * (drive - coulomb * direction) / inertia;
            if w != T::zero() && candidate.signum0() != w.signum0() && coulomb > T::zero() {
                T::zero()
            } else {
                candidate
            }
        };
        m.velocity = new_w;
        m.position = cur.position + dt * new_w;
        for (quantity, value) in [("velocity", m.velocity), ("position", m.position)] {
            if !value.is_finite() {
                return Err(PlantError::NonFinite {
                    motor: i as u8 + 1,
                    quantity,
                    value: value.as_f64(),
                    time,
                });
            }
        }
    }
    Ok(next)
}

/// Stateful plant stepped by exactly one controller.
#[derive(Debug, Clone)]
pub struct Plant<T: Scalar> {
    params: PlantParams<T>,
    state: PlantState<T>,
    load: Load<T>,
    dt: T,
    depleted: bool,
    last_power: T,
}

impl<T: Scalar> Plant<T> {
    pub fn new(params: PlantParams<T>) -> Result<Self, PlantError> {
        params.validate()?;
        let state = PlantState::at_rest(&params);
        let dt = T::lit(params.dt);
        Ok(Self {
            state,
            load: Load::Free,
            dt,
            depleted: false,
            last_power: params.battery.idle_power,
            params,
        })
    }

    pub fn params(&self) -> &PlantParams<T> {
        &self.params
    }

    pub fn state(&self) -> &PlantState<T> {
        &self.state
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    pub fn load(&self) -> Load<T> {
        self.load
    }

    pub fn set_load(&mut self, load: Load<T>) {
        if matches!(load, Load::Blocked) {
            for m in &mut self.state.motors {
                m.velocity = T::zero();
            }
        }
        self.load = load;
    }

    pub fn set_fans(&mut self, on: bool) {
        self.state.fans_on = on;
    }

    /// Swaps in a fully charged pack.
    pub fn recharge(&mut self) {
        self.state.soc = T::one();
        self.state.pack_voltage = self.params.battery.voltage_at(T::one());
        self.depleted = false;
        self.last_power = self.params.battery.idle_power;
    }

    /// The BMS has cut the pack at the low-voltage threshold.
    pub fn depleted(&self) -> bool {
        self.depleted
    }

    /// Electrical draw during the last step, W.
    pub fn last_power(&self) -> T {
        self.last_power
    }

    /// Instantaneous level at the microphone. A depleted unit is silent apart from the room.
    pub fn sound_level(&self) -> T {
        let a = &self.params.acoustic;
        if self.depleted {
            return a.room_floor;
        }
        let speeds = [self.state.motors[0].velocity, self.state.motors[1].velocity];
        sound_level(&speeds, self.state.fans_on, a)
    }

    /// Advances one fixed step with the given torque commands.
    pub fn step(&mut self, torque_commands: [T; 2]) -> Result<(), PlantError> {
        let commands = if self.depleted {
            [T::zero(); 2]
        } else {
            torque_commands
        };
        let mut next = step_mechanics(&self.state, commands, &self.load, &self.params, self.dt)?;
        let fans_on = next.fans_on && !self.depleted;
        for i in 0..2 {
            let m = &mut next.motors[i];
            let loss = copper_loss(m.applied_torque, self.params.motor(i));
            m.stator_temp =
                thermal_step(m.stator_temp, loss, &self.params.thermal, fans_on, self.dt);
        }
        if !self.depleted {
            let torques = [next.motors[0].applied_torque, next.motors[1].applied_torque];
            let speeds = [next.motors[0].velocity, next.motors[1].velocity];
            let power = electrical_power(
                &torques,
                &speeds,
                [&self.params.motor1, &self.params.motor2],
                self.params.battery.idle_power,
            );
            let b = battery_step(next.soc, power, self.dt, &self.params.battery);
            next.soc = b.soc;
            next.pack_voltage = b.voltage;
            self.depleted = b.depleted;
            self.last_power = power;
        } else {
            self.last_power = T::zero();
        }
        next.step_count = self.state.step_count + 1;
        next.sim_time = next.step_count as f64 * self.params.dt;
        self.state = next;
        Ok(())
    }
}
