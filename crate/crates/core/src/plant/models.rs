//! Pure model functions: torque map, cable tension, thermal, power, battery, acoustics.

use super::params::{AcousticParams, BatteryParams, MotorParams, ThermalParams};
use super::PlantError;
use crate::analysis::energetic_add;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueOutput<T> {
    /// Torque delivered at the rotor, N·m.
    pub torque: T,
    /// The command exceeded the peak torque and was clamped.
    pub saturated: bool,
}

/// Delivered torque for a commanded torque: `sign(c)·max(0, a·|c| − b)`.
///
/// Commands beyond the peak torque are clamped and flagged, not rejected.
pub fn applied_torque<T: Scalar>(cmd: T, params: &MotorParams<T>) -> TorqueOutput<T> {
    let saturated = cmd.abs() > params.peak_torque;
    let clamped = cmd.max(-params.peak_torque).min(params.peak_torque);
    let magnitude = (params.torque_gain * clamped.abs() - params.torque_offset).max(T::zero());
    TorqueOutput {
        torque: clamped.signum0() * magnitude.min(params.peak_torque),
        saturated,
    }
}

/// Smallest command that produces `target` delivered torque (inverse of the map above zero).
pub fn command_for_torque<T: Scalar>(target: T, params: &MotorParams<T>) -> T {
    if target == T::zero() {
        return T::zero();
    }
    target.signum0() * (target.abs() + params.torque_offset) / params.torque_gain
}

pub fn cogging_torque<T: Scalar>(position: T, params: &MotorParams<T>) -> T {
    let cycles = T::lit(f64::from(params.cogging_cycles_per_rev));
    params.cogging_amplitude * (cycles * position).sin()
}

/// Cable tension produced by a rotor torque on a pulley.
pub fn cable_tension<T: Scalar>(torque: T, pulley_radius: T) -> Result<T, PlantError> {
    if pulley_radius.is_nan() || pulley_radius <= T::zero() {
        return Err(PlantError::Config("pulley radius must be positive"));
    }
    Ok(torque / pulley_radius)
}

/// Copper loss `(τ/kt)²·R` for a delivered torque.
pub fn copper_loss<T: Scalar>(torque: T, params: &MotorParams<T>) -> T {
    let current = torque / params.kt;
    current * current * params.winding_resistance
}

/// Exact update of `C·dT/dt = P − (T − ambient)/R_th` over `dt` with constant loss.
pub fn thermal_step<T: Scalar>(
    temp: T,
    electrical_loss: T,
    params: &ThermalParams<T>,
    fans_on: bool,
    dt: T,
) -> T {
    let r = params.r_th(fans_on);
    let steady = params.ambient + electrical_loss * r;
    let decay = (-dt / (r * params.heat_capacity)).exp();
    steady + (temp - steady) * decay
}

/// Pack draw: idle electronics plus, per motor, positive mechanical power and copper loss.
pub fn electrical_power<T: Scalar>(
    torques: &[T; 2],
    speeds: &[T; 2],
    motors: [&MotorParams<T>; 2],
    idle_power: T,
) -> T {
    let mut p = idle_power;
    for i in 0..2 {
        p += (torques[i] * speeds[i]).max(T::zero()) + copper_loss(torques[i], motors[i]);
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep<T> {
    pub soc: T,
    pub voltage: T,
    pub depleted: bool,
}

/// Coulomb-counting style energy bookkeeping with a SOC→voltage lookup.
pub fn battery_step<T: Scalar>(
    soc: T,
    power: T,
    dt: T,
    params: &BatteryParams<T>,
) -> BatteryStep<T> {
    let drawn = power.max(T::zero()) * dt / params.usable_energy_joules();
    let soc = (soc - drawn).max(T::zero());
    let voltage = params.voltage_at(soc);
    BatteryStep {
        soc,
        voltage,
        depleted: voltage <= params.cutoff_voltage,
    }
}

/// Level of one motor source at rotor speed `speed`; `None` when stopped.
pub fn motor_source_level<T: Scalar>(speed: T, params: &AcousticParams<T>) -> Option<T> {
    let w = speed.abs();
    if w > T::zero() {
        Some(params.motor_ref_level + params.motor_slope * (w / params.motor_ref_speed).log10())
    } else {
        None
    }
}

/// Combined level at the microphone: room, fans (when on) and every spinning motor.
pub fn sound_level<T: Scalar>(speeds: &[T], fans_on: bool, params: &AcousticParams<T>) -> T {
    let mut sources = Vec::with_capacity(speeds.len() + 2);
    sources.push(params.room_floor);
    if fans_on {
        sources.push(params.fans_level);
    }
    sources.extend(speeds.iter().filter_map(|&w| motor_source_level(w, params)));
    energetic_add(&sources)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::leq_subtract;
    use crate::plant::params::PlantParams;
    use proptest::prelude::*;

    fn left() -> MotorParams<f64> {
        MotorParams::motor1()
    }
    fn right() -> MotorParams<f64> {
        MotorParams::motor2()
    }

    #[test]
    fn torque_map_examples() {
        assert!((applied_torque(1.0, &left()).torque - 0.795).abs() < 1e-12);
        assert_eq!(applied_torque(0.0, &left()).torque, 0.0);
        // 0.938 * 2.0 - 0.120
        assert!((applied_torque(2.0, &right()).torque - 1.756).abs() < 1e-12);
        // inside the stall offset: clamped at zero, never reversed
        assert_eq!(applied_torque(0.1, &left()).torque, 0.0);
    }

    #[test]
    fn torque_map_saturates_above_peak() {
        let out = applied_torque(5.0, &left());
        assert!(out.saturated);
        assert!((out.torque - (0.915 * 3.0 - 0.120)).abs() < 1e-12);
        assert!(!applied_torque(3.0, &left()).saturated);
    }

    #[test]
    fn inverse_map_roundtrip() {
        for tau in [0.1, 0.294, 1.2525, -0.5] {
            let cmd = command_for_torque(tau, &left());
            assert!((applied_torque(cmd, &left()).torque - tau).abs() < 1e-12);
        }
    }

    #[test]
    fn tension_examples() {
        assert!((cable_tension(0.795_f64, 0.015).unwrap() - 53.0).abs() < 1e-9);
        assert_eq!(cable_tension(0.0, 0.015).unwrap(), 0.0);
        assert!((cable_tension(1.5_f64, 0.015).unwrap() - 100.0).abs() < 1e-9);
        assert!(cable_tension(1.0, 0.0).is_err());
        assert!(cable_tension(1.0, -0.01).is_err());
    }

    #[test]
    fn cogging_is_zero_mean_over_a_revolution() {
        let p = left();
        let n = 42 * 1000;
        let mean: f64 = (0..n)
            .map(|i| cogging_torque(std::f64::consts::TAU * i as f64 / n as f64, &p))
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 1e-9, "{mean}");
    }

    #[test]
    fn thermal_equilibrium_and_decay() {
        let th = ThermalParams::<f64>::default();
        assert_eq!(thermal_step(23.0, 0.0, &th, true, 1.0), 23.0);

        // tau = 405 s: 80 °C decays to ~30 °C after 850 s
        let tuned = ThermalParams {
            heat_capacity: 405.0 / 3.0,
            r_th_fans_on: 3.0,
            r_th_fans_off: 10.0,
            ambient: 23.0,
        };
        let mut t = 80.0;
        for _ in 0..850 {
            t = thermal_step(t, 0.0, &tuned, true, 1.0);
        }
        let closed_form = 23.0 + 57.0 * (-850.0f64 / 405.0).exp();
        assert!((t - closed_form).abs() < 1e-9);
        assert!((t - 30.0).abs() < 0.1, "{t}");
    }

    #[test]
    fn thermal_rise_is_monotone_and_bounded() {
        let th = ThermalParams::<f64>::default();
        let p = 20.0;
        let bound = th.ambient + p * th.r_th_fans_on;
        let mut t = th.ambient;
        for _ in 0..10_000 {
            let next = thermal_step(t, p, &th, true, 0.5);
            assert!(next > t && next <= bound);
            t = next;
        }
    }

    #[test]
    fn power_examples() {
        let params = PlantParams::<f64>::default();
        let motors = [&params.motor1, &params.motor2];
        assert_eq!(electrical_power(&[0.0; 2], &[0.0; 2], motors, 8.0), 8.0);

        let mut m = left();
        m.kt = 0.1005;
        m.winding_resistance = 0.15;
        let p = electrical_power(&[0.306; 2], &[0.0; 2], [&m, &m], 8.0);
        let per_motor = (0.306f64 / 0.1005).powi(2) * 0.15;
        assert!((per_motor - 1.39).abs() < 0.01);
        assert!((p - 10.78).abs() < 0.02, "{p}");

        let p2 = electrical_power(&[0.612; 2], &[0.0; 2], [&m, &m], 8.0);
        assert!(((p2 - 8.0) / (p - 8.0) - 4.0).abs() < 1e-12);

        // regeneration is discarded
        let regen = electrical_power(&[0.5, 0.0], &[-10.0, 0.0], [&m, &m], 8.0);
        assert!((regen - 8.0 - copper_loss(0.5, &m)).abs() < 1e-12);
    }

    #[test]
    fn battery_examples() {
        let b = BatteryParams::<f64>::default();
        let s = battery_step(1.0, 0.0, 1.0, &b);
        assert_eq!(s.soc, 1.0);
        assert!(!s.depleted);

        // depletion lands within one step of E / P
        let power = 50.0;
        let dt = 1.0;
        let expected = b.usable_energy_joules() / power;
        let mut soc = 1.0;
        let mut t = 0.0;
        loop {
            let s = battery_step(soc, power, dt, &b);
            soc = s.soc;
            t += dt;
            if s.depleted {
                break;
            }
        }
        assert!((t - expected).abs() <= dt, "{t} vs {expected}");
    }

    #[test]
    fn acoustic_examples() {
        let a = AcousticParams::<f64>::default();
        // 25 dB room floor adds 0.055 dB on top of the fan source
        assert!((sound_level(&[0.0, 0.0], true, &a) - 43.7).abs() < 0.1);
        assert!(
            (leq_subtract(sound_level(&[0.0, 0.0], true, &a), a.room_floor).unwrap() - 43.7).abs()
                < 1e-9
        );
        assert_eq!(sound_level(&[0.0, 0.0], false, &a), a.room_floor);

        let single = leq_subtract(sound_level(&[5.0, 0.0], true, &a), a.room_floor).unwrap();
        assert!((single - 50.7).abs() < 1.0, "{single}");
        let both = leq_subtract(sound_level(&[30.0, 30.0], true, &a), a.room_floor).unwrap();
        assert!((both - 61.1).abs() < 1.0, "{both}");

        let l = 55.0;
        let quiet = AcousticParams {
            room_floor: -100.0,
            ..a.clone()
        };
        let one = sound_level(
            &[quiet.motor_ref_speed * 10f64.powf((l - quiet.motor_ref_level) / quiet.motor_slope)],
            false,
            &quiet,
        );
        let two_speed =
            quiet.motor_ref_speed * 10f64.powf((l - quiet.motor_ref_level) / quiet.motor_slope);
        let two = sound_level(&[two_speed, two_speed], false, &quiet);
        assert!((two - one - 3.0103).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn torque_map_is_odd_monotone_and_bounded(c in -3.0f64..3.0, d in 0.0f64..1.0) {
            let p = left();
            let f = |x: f64| applied_torque(x, &p).torque;
            prop_assert_eq!(f(-c), -f(c));
            prop_assert!(f(c + d) >= f(c));
            if c >= 0.0 {
                prop_assert!(f(c) <= p.torque_gain * c);
            }
        }

        #[test]
        fn sound_monotone_in_speed(w in 0.0f64..40.0, dw in 0.0f64..10.0, other in 0.0f64..40.0, fans: bool) {
            let a = AcousticParams::<f64>::default();
            prop_assert!(sound_level(&[w + dw, other], fans, &a) >= sound_level(&[w, other], fans, &a));
            // dropping a source never raises the level
            prop_assert!(sound_level(&[w, 0.0], fans, &a) <= sound_level(&[w, other], fans, &a));
        }

        #[test]
        fn halving_power_doubles_runtime(power in 20.0f64..200.0) {
            let b = BatteryParams::<f64> { usable_energy: 0.5, ..Default::default() };
            let dt = 0.5;
            let run = |p: f64| {
                let (mut soc, mut t) = (1.0, 0.0);
                let mut last_v = b.full_voltage;
                loop {
                    let s = battery_step(soc, p, dt, &b);
                    assert!(s.voltage <= last_v);
                    last_v = s.voltage;
                    soc = s.soc;
                    t += dt;
                    if s.depleted { return t; }
                }
            };
            let full = run(power);
            let half = run(power / 2.0);
            prop_assert!((half - 2.0 * full).abs() <= 2.0 * dt);
        }
    }
}
