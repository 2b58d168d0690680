use serde::{Deserialize, Serialize};

use crate::scalar::{cast, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct PidGains<T> {
    pub kp: T,
    pub ki: T,
    pub kd: T,
    /// Bound on the integral contribution, in output units.
    pub integral_limit: T,
}

impl<T: Scalar> PidGains<T> {
    pub fn is_valid(&self) -> bool {
        let z = T::zero();
        self.kp >= z && self.ki >= z && self.kd >= z && self.integral_limit > z
    }

    pub fn cast<U: Scalar>(&self) -> PidGains<U> {
        PidGains {
            kp: cast(self.kp),
            ki: cast(self.ki),
            kd: cast(self.kd),
            integral_limit: cast(self.integral_limit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState<T> {
    /// Accumulated `ki·∫e`, already in output units.
    pub integral: T,
    pub prev_error: Option<T>,
    pub output: T,
}

/// One step of a PID with integral clamping and output saturation at `±output_limit`.
pub fn pid_step<T: Scalar>(
    err: T,
    gains: &PidGains<T>,
    state: &PidState<T>,
    dt: T,
    output_limit: T,
) -> (T, PidState<T>) {
    let lim = gains.integral_limit;
    let integral = (state.integral + gains.ki * err * dt).max(-lim).min(lim);
    let derivative = match state.prev_error {
        Some(prev) => gains.kd * (err - prev) / dt,
        None => T::zero(),
    };
    let output = (gains.kp * err + integral + derivative)
        .max(-output_limit)
        .min(output_limit);
    (
        output,
        PidState {
            integral,
            prev_error: Some(err),
            output,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const PEAK: f64 = 3.0;

    fn gains(kp: f64, ki: f64, kd: f64) -> PidGains<f64> {
        PidGains {
            kp,
            ki,
            kd,
            integral_limit: 1.0,
        }
    }

    #[test]
    fn zero_error_zero_output() {
        let (out, st) = pid_step(0.0, &gains(1.0, 1.0, 1.0), &PidState::default(), 1e-3, PEAK);
        assert_eq!(out, 0.0);
        assert_eq!(st.integral, 0.0);
    }

    #[test]
    fn proportional_only() {
        let g = gains(2.0, 0.0, 0.0);
        let mut st = PidState::default();
        for _ in 0..10 {
            let (out, next) = pid_step(1.0, &g, &st, 1e-3, PEAK);
            assert_eq!(out, 2.0);
            st = next;
        }
    }

    #[test]
    fn anti_windup_pins_integral_and_output() {
        let g = gains(0.5, 50.0, 0.0);
        let mut st = PidState::default();
        for _ in 0..10_000 {
            st = pid_step(100.0, &g, &st, 1e-3, PEAK).1;
        }
        assert_eq!(st.output, PEAK);
        assert_eq!(st.integral, g.integral_limit);
        // unwinds immediately once the error reverses
        let (out, _) = pid_step(-1.0, &g, &st, 1e-3, PEAK);
        assert!(out < 1.0);
    }

    #[test]
    fn replay_is_bit_exact() {
        let g = gains(0.3, 2.0, 0.01);
        let errors: Vec<f64> = (0..500).map(|k| (k as f64 * 0.37).sin() * 4.0).collect();
        let run = || {
            let mut st = PidState::default();
            errors
                .iter()
                .map(|&e| {
                    let (o, s) = pid_step(e, &g, &st, 1e-3, PEAK);
                    st = s;
                    o
                })
                .collect::<Vec<_>>()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
