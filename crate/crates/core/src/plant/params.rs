//! Physical constants of the simulated tendon driver unit.

use serde::{Deserialize, Serialize};

use super::PlantError;
use crate::scalar::{cast, Scalar};

/// Torque constant implied by a KV rating: `60 / (2π·KV)` N·m/A.
pub fn kt_from_kv(kv_rpm_per_volt: f64) -> f64 {
    60.0 / (std::f64::consts::TAU * kv_rpm_per_volt)
}

const KV_RATING: f64 = 95.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct MotorParams<T> {
    /// N·m/A
    pub kt: T,
    pub rated_torque: T,
    pub peak_torque: T,
    /// Slope of the commanded → delivered torque map.
    pub torque_gain: T,
    /// Stall offset subtracted from the delivered torque, N·m.
    pub torque_offset: T,
    /// Coulomb friction opposing rotor motion, N·m.
    pub stiction: T,
    pub cogging_amplitude: T,
    pub cogging_cycles_per_rev: u32,
    /// kg·m²
    pub rotor_inertia: T,
    /// N·m·s/rad
    pub viscous_friction: T,
    /// Ω
    pub winding_resistance: T,
}

impl<T: Scalar> MotorParams<T> {
    fn u8_lite(torque_gain: f64) -> Self {
        Self {
            kt: T::lit(kt_from_kv(KV_RATING)),
            rated_torque: T::lit(1.5),
            peak_torque: T::lit(3.0),
            torque_gain: T::lit(torque_gain),
            torque_offset: T::lit(0.120),
            stiction: T::zero(),
            cogging_amplitude: T::lit(0.05),
            cogging_cycles_per_rev: 42,
            rotor_inertia: T::lit(5.0e-4),
            viscous_friction: T::lit(2.0e-3),
            winding_resistance: T::lit(0.1417),
        }
    }

    /// Left motor (motor 1) defaults.
    pub fn motor1() -> Self {
        Self::u8_lite(0.915)
    }

    /// Right motor (motor 2) defaults.
    pub fn motor2() -> Self {
        Self::u8_lite(0.938)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let z = T::zero();
        check(self.kt > z, "kt must be positive")?;
        check(
            self.rated_torque > z && self.rated_torque <= self.peak_torque,
            "require 0 < rated_torque <= peak_torque",
        )?;
        check(
            self.torque_gain > z && self.torque_gain <= T::lit(1.2),
            "torque_gain must lie in (0, 1.2]",
        )?;
        check(self.torque_offset >= z, "torque_offset must be >= 0")?;
        check(self.stiction >= z, "stiction must be >= 0")?;
        check(
            self.cogging_amplitude >= z,
            "cogging_amplitude must be >= 0",
        )?;
        check(self.rotor_inertia > z, "rotor_inertia must be positive")?;
        check(self.viscous_friction >= z, "viscous_friction must be >= 0")?;
        check(
            self.winding_resistance >= z,
            "winding_resistance must be >= 0",
        )?;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> MotorParams<U> {
        MotorParams {
            kt: cast(self.kt),
            rated_torque: cast(self.rated_torque),
            peak_torque: cast(self.peak_torque),
            torque_gain: cast(self.torque_gain),
            torque_offset: cast(self.torque_offset),
            stiction: cast(self.stiction),
            cogging_amplitude: cast(self.cogging_amplitude),
            cogging_cycles_per_rev: self.cogging_cycles_per_rev,
            rotor_inertia: cast(self.rotor_inertia),
            viscous_friction: cast(self.viscous_friction),
            winding_resistance: cast(self.winding_resistance),
        }
    }
}

/// Single-node stator model, one per motor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct ThermalParams<T> {
    /// J/K
    pub heat_capacity: T,
    /// K/W with forced airflow.
    pub r_th_fans_on: T,
    /// K/W without airflow.
    pub r_th_fans_off: T,
    /// °C
    pub ambient: T,
}

impl<T: Scalar> Default for ThermalParams<T> {
    fn default() -> Self {
        Self {
            heat_capacity: T::lit(118.4),
            r_th_fans_on: T::lit(3.465),
            r_th_fans_off: T::lit(17.42),
            ambient: T::lit(23.0),
        }
    }
}

impl<T: Scalar> ThermalParams<T> {
    pub fn r_th(&self, fans_on: bool) -> T {
        if fans_on {
            self.r_th_fans_on
        } else {
            self.r_th_fans_off
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let z = T::zero();
        check(
            self.heat_capacity > z && self.r_th_fans_on > z && self.r_th_fans_off > z,
            "thermal capacity and resistances must be positive",
        )?;
        check(
            self.r_th_fans_on < self.r_th_fans_off,
            "r_th_fans_on must be below r_th_fans_off",
        )?;
        check(self.ambient.is_finite(), "ambient must be finite")
    }

    pub fn cast<U: Scalar>(&self) -> ThermalParams<U> {
        ThermalParams {
            heat_capacity: cast(self.heat_capacity),
            r_th_fans_on: cast(self.r_th_fans_on),
            r_th_fans_off: cast(self.r_th_fans_off),
            ambient: cast(self.ambient),
        }
    }
}

/// 7S1P pack behind a BMS with a low-voltage cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct BatteryParams<T> {
    pub full_voltage: T,
    pub cutoff_voltage: T,
    /// Energy between full charge and cutoff, W·h.
    pub usable_energy: T,
    /// Controller, fans and drive electronics with motors disabled, W.
    pub idle_power: T,
    /// `(soc, volts)` pairs sorted by ascending state of charge.
    pub soc_voltage_curve: Vec<(T, T)>,
}

impl<T: Scalar> Default for BatteryParams<T> {
    fn default() -> Self {
        Self {
            full_voltage: T::lit(29.1),
            cutoff_voltage: T::lit(17.5),
            // 8.0 W sustained for 11:20:23; idle power and winding resistance are fitted jointly.
            usable_energy: T::lit(90.7178),
            idle_power: T::lit(7.824),
            soc_voltage_curve: vec![(T::zero(), T::lit(17.5)), (T::one(), T::lit(29.1))],
        }
    }
}

impl<T: Scalar> BatteryParams<T> {
    pub fn usable_energy_joules(&self) -> T {
        self.usable_energy * T::lit(3600.0)
    }

    /// Pack voltage at a state of charge, linearly interpolated on the curve.
    pub fn voltage_at(&self, soc: T) -> T {
        let curve = &self.soc_voltage_curve;
        let soc = soc.max(T::zero()).min(T::one());
        let upper = curve
            .iter()
            .position(|p| p.0 >= soc)
            .unwrap_or(curve.len() - 1);
        if upper == 0 {
            return curve[0].1;
        }
        let (s0, v0) = curve[upper - 1];
        let (s1, v1) = curve[upper];
        v0 + (soc - s0) * (v1 - v0) / (s1 - s0)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        check(
            self.full_voltage > self.cutoff_voltage,
            "full_voltage must exceed cutoff_voltage",
        )?;
        check(
            self.usable_energy > T::zero() && self.idle_power > T::zero(),
            "usable_energy and idle_power must be positive",
        )?;
        let curve = &self.soc_voltage_curve;
        check(
            curve.len() >= 2,
            "soc_voltage_curve needs at least two points",
        )?;
        check(
            curve.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1),
            "soc_voltage_curve must be strictly increasing in both soc and voltage",
        )?;
        let first = curve[0];
        let last = curve[curve.len() - 1];
        check(
            first.0 == T::zero() && first.1 == self.cutoff_voltage,
            "soc_voltage_curve must map soc 0 to cutoff_voltage",
        )?;
        check(
            last.0 == T::one() && last.1 == self.full_voltage,
            "soc_voltage_curve must map soc 1 to full_voltage",
        )
    }

    pub fn cast<U: Scalar>(&self) -> BatteryParams<U> {
        BatteryParams {
            full_voltage: cast(self.full_voltage),
            cutoff_voltage: cast(self.cutoff_voltage),
            usable_energy: cast(self.usable_energy),
            idle_power: cast(self.idle_power),
            soc_voltage_curve: self
                .soc_voltage_curve
                .iter()
                .map(|&(s, v)| (cast(s), cast(v)))
                .collect(),
        }
    }
}

/// Source levels at the virtual microphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct AcousticParams<T> {
    /// Room with the unit switched off, dB.
    pub room_floor: T,
    /// Fan source alone, dB.
    pub fans_level: T,
    /// One motor at `motor_ref_speed`, dB.
    pub motor_ref_level: T,
    /// rad/s
    pub motor_ref_speed: T,
    /// dB per decade of rotor speed.
    pub motor_slope: T,
}

impl<T: Scalar> Default for AcousticParams<T> {
    fn default() -> Self {
        Self {
            room_floor: T::lit(25.0),
            fans_level: T::lit(43.7),
            motor_ref_level: T::lit(49.7335),
            motor_ref_speed: T::lit(5.0),
            motor_slope: T::lit(10.6361),
        }
    }
}

impl<T: Scalar> AcousticParams<T> {
    pub fn validate(&self) -> Result<(), PlantError> {
        check(
            self.fans_level > self.room_floor,
            "fans_level must exceed room_floor",
        )?;
        check(self.motor_slope >= T::zero(), "motor_slope must be >= 0")?;
        check(
            self.motor_ref_speed > T::zero(),
            "motor_ref_speed must be positive",
        )
    }

    pub fn cast<U: Scalar>(&self) -> AcousticParams<U> {
        AcousticParams {
            room_floor: cast(self.room_floor),
            fans_level: cast(self.fans_level),
            motor_ref_level: cast(self.motor_ref_level),
            motor_ref_speed: cast(self.motor_ref_speed),
            motor_slope: cast(self.motor_slope),
        }
    }
}

/// Test-bench geometry shared by every load model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct FixtureParams<T> {
    /// m
    pub pulley_radius: T,
    /// Coulomb coefficient of the redirect pulley, fraction of cable tension.
    pub redirect_friction: T,
    /// Axial stiffness of the cable linking both motors, N/m.
    pub cable_stiffness: T,
    /// N·s/m
    pub cable_damping: T,
    /// m/s²
    pub gravity: T,
}

impl<T: Scalar> Default for FixtureParams<T> {
    fn default() -> Self {
        Self {
            pulley_radius: T::lit(0.015),
            redirect_friction: T::zero(),
            cable_stiffness: T::lit(2.0e4),
            cable_damping: T::lit(200.0),
            gravity: T::lit(9.81),
        }
    }
}

impl<T: Scalar> FixtureParams<T> {
    pub fn validate(&self) -> Result<(), PlantError> {
        check(
            self.pulley_radius > T::zero(),
            "pulley_radius must be positive",
        )?;
        check(
            self.redirect_friction >= T::zero() && self.redirect_friction < T::one(),
            "redirect_friction must lie in [0, 1)",
        )?;
        check(
            self.cable_stiffness > T::zero() && self.cable_damping >= T::zero(),
            "cable stiffness must be positive and damping non-negative",
        )?;
        check(self.gravity > T::zero(), "gravity must be positive")
    }

    pub fn cast<U: Scalar>(&self) -> FixtureParams<U> {
        FixtureParams {
            pulley_radius: cast(self.pulley_radius),
            redirect_friction: cast(self.redirect_friction),
            cable_stiffness: cast(self.cable_stiffness),
            cable_damping: cast(self.cable_damping),
            gravity: cast(self.gravity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct PlantParams<T> {
    /// Integration step, s.
    pub dt: f64,
    pub motor1: MotorParams<T>,
    pub motor2: MotorParams<T>,
    pub thermal: ThermalParams<T>,
    pub battery: BatteryParams<T>,
    pub acoustic: AcousticParams<T>,
    pub fixture: FixtureParams<T>,
}

impl<T: Scalar> Default for PlantParams<T> {
    fn default() -> Self {
        Self {
            dt: 1.0e-3,
            motor1: MotorParams::motor1(),
            motor2: MotorParams::motor2(),
            thermal: ThermalParams::default(),
            battery: BatteryParams::default(),
            acoustic: AcousticParams::default(),
            fixture: FixtureParams::default(),
        }
    }
}

impl<T: Scalar> PlantParams<T> {
    pub fn motor(&self, index: usize) -> &MotorParams<T> {
        if index == 0 {
            &self.motor1
        } else {
            &self.motor2
        }
    }

    pub fn motor_mut(&mut self, index: usize) -> &mut MotorParams<T> {
        if index == 0 {
            &mut self.motor1
        } else {
            &mut self.motor2
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        check(
            self.dt > 0.0 && self.dt <= 0.01,
            "dt must lie in (0, 10 ms]",
        )?;
        self.motor1.validate()?;
        self.motor2.validate()?;
        self.thermal.validate()?;
        self.battery.validate()?;
        self.acoustic.validate()?;
        self.fixture.validate()
    }

    pub fn cast<U: Scalar>(&self) -> PlantParams<U> {
        PlantParams {
            dt: self.dt,
            motor1: self.motor1.cast(),
            motor2: self.motor2.cast(),
            thermal: self.thermal.cast(),
            battery: self.battery.cast(),
            acoustic: self.acoustic.cast(),
            fixture: self.fixture.cast(),
        }
    }
}

fn check(ok: bool, msg: &'static str) -> Result<(), PlantError> {
    if ok {
        Ok(())
    } else {
        Err(PlantError::Config(msg))
    }
}
