//! Numerical routines that turn raw telemetry into benchmark metrics.
//!
//! Everything here is a pure function over immutable series and is generic
//! over the [`Scalar`] type.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("linear fit needs at least two distinct x values")]
    SingularFit,
    #[error("reference amplitude {0:e} is below the numeric floor")]
    NoExcitation(f64),
    #[error(
        "signals must have equal, non-zero length (reference {reference}, measured {measured})"
    )]
    LengthMismatch { reference: usize, measured: usize },
    #[error("record covers {cycles:.2} cycles, at least {required} required")]
    TooFewCycles { cycles: f64, required: usize },
    #[error("sample rate {rate} Hz must exceed 10x the excitation frequency {freq} Hz")]
    Undersampled { rate: f64, freq: f64 },
    #[error("invalid grid bounds: need 0 < f_lo < f_hi and n >= 2")]
    InvalidGrid,
    #[error("measured level {meas} dB is not above the floor {floor} dB")]
    NonPhysicalSubtraction { meas: f64, floor: f64 },
    #[error("empty input series")]
    Empty,
    #[error("threshold {threshold} not reached; last value {last}")]
    NotReached { threshold: f64, last: f64 },
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

/// One point of a velocity-tracking frequency response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodePoint<T> {
    /// Reference amplitude, rad/s.
    pub amplitude: T,
    /// Excitation frequency, Hz.
    pub frequency: T,
    pub gain_db: T,
    /// Degrees, lag negative, in (-180, 180].
    pub phase_deg: T,
}

/// Equivalent continuous sound pressure level over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoundLevel<T> {
    pub level_db: T,
    pub window_s: T,
}

/// A uniformly sampled signal.
#[derive(Debug, Clone, Copy)]
pub struct Sampled<'a, T> {
    pub t0: T,
    pub period: T,
    pub values: &'a [T],
}

impl<'a, T: Scalar> Sampled<'a, T> {
    pub fn new(t0: T, period: T, values: &'a [T]) -> Self {
        Self { t0, period, values }
    }

    fn time(&self, i: usize) -> T {
        self.t0 + self.period * T::from_usize_lossy(i)
    }
}

pub fn linear_fit<T: Scalar>(points: &[(T, T)]) -> Result<LinearFit<T>> {
    if points.len() < 2 {
        return Err(AnalysisError::SingularFit);
    }
    let n = T::from_usize_lossy(points.len());
    let mean_x = points.iter().map(|p| p.0).sum::<T>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<T>() / n;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    let mut syy = T::zero();
    for &(x, y) in points {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= T::zero() {
        return Err(AnalysisError::SingularFit);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum::<T>();
    let r_squared = if syy > T::zero() {
        (T::one() - ss_res / syy).max(T::zero()).min(T::one())
    } else {
        T::one()
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Least-squares projection of `signal` onto `sin(2πft)` and `cos(2πft)`.
/// Returns the `(sin, cos)` coefficients.
fn project<T: Scalar>(signal: &Sampled<'_, T>, freq: T) -> (T, T) {
    let w = T::TAU() * freq;
    let (mut ss, mut sc, mut cc, mut ys, mut yc) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for (i, &y) in signal.values.iter().enumerate() {
        let (s, c) = (w * signal.time(i)).sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        ys += y * s;
        yc += y * c;
    }
    let det = ss * cc - sc * sc;
    ((ys * cc - yc * sc) / det, (yc * ss - ys * sc) / det)
}

/// Wraps an angle in degrees to (-180, 180].
pub fn wrap_degrees<T: Scalar>(deg: T) -> T {
    let full = T::lit(360.0);
    let half = T::lit(180.0);
    let mut d = deg % full;
    if d > half {
        d -= full;
    } else if d <= -half {
        d += full;
    }
    d
}

/// Gain (dB) and phase (degrees, lag negative) of `measured` relative to
/// `reference` at the known excitation frequency.
pub fn gain_phase_at<T: Scalar>(
    reference: &Sampled<'_, T>,
    measured: &Sampled<'_, T>,
    freq: T,
) -> Result<(T, T)> {
    gain_phase_over(reference, measured, freq, 10)
}

/// [`gain_phase_at`] with a caller-chosen minimum record length in cycles.
pub fn gain_phase_over<T: Scalar>(
    reference: &Sampled<'_, T>,
    measured: &Sampled<'_, T>,
    freq: T,
    min_cycles: usize,
) -> Result<(T, T)> {
    let n = reference.values.len();
    if n == 0 || n != measured.values.len() {
        return Err(AnalysisError::LengthMismatch {
            reference: n,
            measured: measured.values.len(),
        });
    }
    let rate = T::one() / reference.period;
    if rate <= T::lit(10.0) * freq {
        return Err(AnalysisError::Undersampled {
            rate: rate.as_f64(),
            freq: freq.as_f64(),
        });
    }
    let cycles = T::from_usize_lossy(n) * reference.period * freq;
    // Tolerate the last sample landing one period short of the final cycle.
    let required = T::from_usize_lossy(min_cycles) - reference.period * freq * T::lit(1.5);
    if cycles < required {
        return Err(AnalysisError::TooFewCycles {
            cycles: cycles.as_f64(),
            required: min_cycles,
        });
    }
    let (rs, rc) = project(reference, freq);
    let (ms, mc) = project(measured, freq);
    let ref_amp = rs.hypot(rc);
    if ref_amp < T::epsilon().sqrt() {
        return Err(AnalysisError::NoExcitation(ref_amp.as_f64()));
    }
    let gain = T::lit(20.0) * (ms.hypot(mc) / ref_amp).log10();
    let phase = (mc.atan2(ms) - rc.atan2(rs)).to_degrees();
    Ok((gain, wrap_degrees(phase)))
}

/// `n` geometrically spaced frequencies from `f_lo` to `f_hi`, endpoints exact.
pub fn log_space_grid<T: Scalar>(f_lo: T, f_hi: T, n: usize) -> Result<Vec<T>> {
    if !(f_lo > T::zero() && f_hi > f_lo) || n < 2 || !f_hi.is_finite() {
        return Err(AnalysisError::InvalidGrid);
    }
    let ratio = f_hi / f_lo;
    let last = T::from_usize_lossy(n - 1);
    let mut grid: Vec<T> = (0..n)
        .map(|i| f_lo * ratio.powf(T::from_usize_lossy(i) / last))
        .collect();
    grid[0] = f_lo;
    grid[n - 1] = f_hi;
    Ok(grid)
}

fn db_to_power<T: Scalar>(level: T) -> T {
    T::lit(10.0).powf(level / T::lit(10.0))
}

fn power_to_db<T: Scalar>(power: T) -> T {
    T::lit(10.0) * power.log10()
}

/// Removes the room floor from a measured level: `10·log10(10^(Lm/10) − 10^(Lr/10))`.
pub fn leq_subtract<T: Scalar>(l_meas: T, l_room: T) -> Result<T> {
    let rest = db_to_power(l_meas) - db_to_power(l_room);
    if l_meas <= l_room || rest <= T::zero() {
        return Err(AnalysisError::NonPhysicalSubtraction {
            meas: l_meas.as_f64(),
            floor: l_room.as_f64(),
        });
    }
    Ok(power_to_db(rest))
}

/// Energetic sum of incoherent sources. An empty list has no energy (−∞ dB).
pub fn energetic_add<T: Scalar>(levels: &[T]) -> T {
    power_to_db(levels.iter().map(|&l| db_to_power(l)).sum::<T>())
}

/// Energy-average of instantaneous levels sampled uniformly over a window.
pub fn leq_average<T: Scalar>(levels: &[T], window_s: T) -> Result<SoundLevel<T>> {
    if levels.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mean =
        levels.iter().map(|&l| db_to_power(l)).sum::<T>() / T::from_usize_lossy(levels.len());
    Ok(SoundLevel {
        level_db: power_to_db(mean),
        window_s,
    })
}

fn interpolate_crossing<T: Scalar>(a: (T, T), b: (T, T), level: T) -> T {
    if b.1 == a.1 {
        return b.0;
    }
    a.0 + (level - a.1) * (b.0 - a.0) / (b.1 - a.1)
}

/// First time at or after index `from` where the series crosses `level` in
/// the given direction, linearly interpolated, together with the bracketing index.
fn first_crossing<T: Scalar>(
    log: &[(T, T)],
    from: usize,
    level: T,
    rising: bool,
) -> Option<(T, usize)> {
    let hit = |v: T| if rising { v >= level } else { v <= level };
    let idx = (from..log.len()).find(|&i| hit(log[i].1))?;
    if idx == 0 {
        return Some((log[idx].0, idx));
    }
    Some((interpolate_crossing(log[idx - 1], log[idx], level), idx))
}

/// Time between the `start` and `stop` crossings of a temperature log.
/// Direction is rising when `stop > start`.
pub fn time_to_threshold<T: Scalar>(log: &[(T, T)], start: T, stop: T) -> Result<T> {
    let last = log.last().ok_or(AnalysisError::Empty)?.1;
    let rising = stop > start;
    let not_reached = |threshold: T| AnalysisError::NotReached {
        threshold: threshold.as_f64(),
        last: last.as_f64(),
    };
    let (t_start, idx) = first_crossing(log, 0, start, rising).ok_or_else(|| not_reached(start))?;
    let (t_stop, _) = first_crossing(log, idx, stop, rising).ok_or_else(|| not_reached(stop))?;
    Ok(t_stop - t_start)
}

/// Elapsed time from the first log entry until the voltage first reaches `cutoff`.
pub fn runtime_from_log<T: Scalar>(log: &[(T, T)], cutoff: T) -> Result<T> {
    let first = log.first().ok_or(AnalysisError::Empty)?;
    let (t, _) =
        first_crossing(log, 0, cutoff, false).ok_or_else(|| AnalysisError::NotReached {
            threshold: cutoff.as_f64(),
            last: log[log.len() - 1].1.as_f64(),
        })?;
    Ok(t - first.0)
}

/// Arithmetic mean and population standard deviation.
pub fn torque_stats<T: Scalar>(samples: &[T]) -> Result<(T, T)> {
    if samples.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = T::from_usize_lossy(samples.len());
    let mean = samples.iter().copied().sum::<T>() / n;
    let var = samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(amp: f64, f: f64, phase: f64, period: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (std::f64::consts::TAU * f * i as f64 * period + phase).sin())
            .collect()
    }

    #[test]
    fn fit_identity_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, i as f64)).collect();
        let fit = linear_fit(&pts).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-15);
        assert!(fit.intercept.abs() < 1e-15);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn fit_recovers_left_motor_line() {
        let pts: Vec<(f64, f64)> = (1..=8)
            .map(|i| {
                let x = 0.25 * i as f64;
                (x, 0.915 * x - 0.120)
            })
            .collect();
        let fit = linear_fit(&pts).unwrap();
        assert!((fit.slope - 0.915).abs() < 1e-12);
        assert!((fit.intercept + 0.120).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_x() {
        assert_eq!(
            linear_fit(&[(1.0, 2.0), (1.0, 3.0)]),
            Err(AnalysisError::SingularFit)
        );
        assert_eq!(linear_fit(&[(1.0, 2.0)]), Err(AnalysisError::SingularFit));
    }

    #[test]
    fn gain_phase_identity_and_scaling() {
        let period = 1e-3;
        let n = 10_000;
        let r = sine(5.0, 1.0, 0.0, period, n);
        let s = Sampled::new(0.0, period, &r);
        let (g, p) = gain_phase_at(&s, &s, 1.0).unwrap();
        assert!(g.abs() < 1e-9 && p.abs() < 1e-9);

        let half: Vec<f64> = r.iter().map(|x| 0.5 * x).collect();
        let (g, p) = gain_phase_at(&s, &Sampled::new(0.0, period, &half), 1.0).unwrap();
        assert!((g + 6.0206).abs() < 1e-4, "{g}");
        assert!(p.abs() < 1e-9);
    }

    #[test]
    fn quarter_period_delay_is_minus_ninety() {
        let period = 1e-3;
        let n = 10_000;
        let r = sine(5.0, 1.0, 0.0, period, n);
        let d = sine(5.0, 1.0, -std::f64::consts::FRAC_PI_2, period, n);
        let (g, p) = gain_phase_at(
            &Sampled::new(0.0, period, &r),
            &Sampled::new(0.0, period, &d),
            1.0,
        )
        .unwrap();
        assert!(g.abs() < 1e-9);
        assert!((p + 90.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn gain_phase_errors() {
        let zeros = vec![0.0; 2000];
        let z = Sampled::new(0.0, 0.01, &zeros);
        assert!(matches!(
            gain_phase_at(&z, &z, 1.0),
            Err(AnalysisError::NoExcitation(_))
        ));
        let short = sine(1.0, 1.0, 0.0, 0.01, 300);
        let s = Sampled::new(0.0, 0.01, &short);
        assert!(matches!(
            gain_phase_at(&s, &s, 1.0),
            Err(AnalysisError::TooFewCycles { .. })
        ));
        let coarse = sine(1.0, 10.0, 0.0, 0.01, 2000);
        let c = Sampled::new(0.0, 0.01, &coarse);
        assert!(matches!(
            gain_phase_at(&c, &c, 10.0),
            Err(AnalysisError::Undersampled { .. })
        ));
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_degrees(180.0), 180.0);
        assert_eq!(wrap_degrees(-180.0), 180.0);
        assert_eq!(wrap_degrees(190.0), -170.0);
        assert_eq!(wrap_degrees(-350.0), 10.0);
    }

    #[test]
    fn grid_examples() {
        let g = log_space_grid(0.1_f64, 10.0, 20).unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[19], 10.0);
        // 0.1 * 10^(2/19)
        assert!((g[1] - 0.127_427_498_570_313_4).abs() < 1e-12, "{}", g[1]);
        assert_eq!(log_space_grid(1.0, 10.0, 2).unwrap(), vec![1.0, 10.0]);
        assert_eq!(log_space_grid(1.0, 1.0, 5), Err(AnalysisError::InvalidGrid));
        assert_eq!(log_space_grid(0.0, 1.0, 5), Err(AnalysisError::InvalidGrid));
        assert_eq!(log_space_grid(0.1, 1.0, 1), Err(AnalysisError::InvalidGrid));
    }

    #[test]
    fn level_algebra_examples() {
        assert!((leq_subtract(46.7103_f64, 43.7).unwrap() - 43.7).abs() < 1e-3);
        // 10*log10(1e6 - 10^4.37)
        assert!((leq_subtract(60.0_f64, 43.7).unwrap() - 59.896_979_139_792_1).abs() < 1e-9);
        assert!(matches!(
            leq_subtract(43.7, 43.7),
            Err(AnalysisError::NonPhysicalSubtraction { .. })
        ));
        assert!((energetic_add(&[61.0_f64]) - 61.0).abs() < 1e-12);
        assert!((energetic_add(&[50.0_f64, 50.0]) - 53.010_299_956_639_81).abs() < 1e-9);
    }

    #[test]
    fn leq_average_of_constant_is_constant() {
        let s = leq_average(&[50.0_f64; 10], 20.0).unwrap();
        assert!((s.level_db - 50.0).abs() < 1e-12);
        assert_eq!(s.window_s, 20.0);
        assert_eq!(leq_average::<f64>(&[], 1.0), Err(AnalysisError::Empty));
    }

    #[test]
    fn exponential_rise_crossing_matches_closed_form() {
        // T(t) = 23 + 100 (1 - exp(-t/tau)); crossing of level L at -tau ln(1 - (L-23)/100).
        let tau = 400.0;
        let dt = 1.0;
        let log: Vec<(f64, f64)> = (0..5000)
            .map(|i| {
                let t = i as f64 * dt;
                (t, 23.0 + 100.0 * (1.0 - (-t / tau).exp()))
            })
            .collect();
        let cross = |l: f64| -tau * (1.0 - (l - 23.0) / 100.0).ln();
        let expected = cross(80.0) - cross(30.0);
        let got = time_to_threshold(&log, 30.0, 80.0).unwrap();
        assert!((got - expected).abs() < dt, "{got} vs {expected}");

        // Falling direction on a decay from 80 toward 23.
        let fall: Vec<(f64, f64)> = (0..5000)
            .map(|i| {
                let t = i as f64 * dt;
                (t, 23.0 + 57.0 * (-t / tau).exp())
            })
            .collect();
        let expected = tau * (57.0f64 / 7.0).ln();
        let got = time_to_threshold(&fall, 80.0, 30.0).unwrap();
        assert!((got - expected).abs() < dt);
    }

    #[test]
    fn flat_log_never_reaches() {
        let log: Vec<(f64, f64)> = (0..100).map(|i| (i as f64, 25.0)).collect();
        match time_to_threshold(&log, 30.0, 80.0) {
            Err(AnalysisError::NotReached { threshold, last }) => {
                assert_eq!(threshold, 30.0);
                assert_eq!(last, 25.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn linear_discharge_runtime() {
        let log: Vec<(f64, f64)> = (0..=100)
            .map(|i| (i as f64 * 10.0, 29.1 - 11.6 * i as f64 / 100.0))
            .collect();
        let rt = runtime_from_log(&log, 17.5).unwrap();
        assert!((rt - 1000.0).abs() < 1e-9, "{rt}");
        assert!(matches!(
            runtime_from_log(&log[..50], 17.5),
            Err(AnalysisError::NotReached { .. })
        ));
    }

    #[test]
    fn stats_examples() {
        assert_eq!(torque_stats(&[0.3; 7]).unwrap(), (0.3, 0.0));
        let sq: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 0.5 } else { -0.5 })
            .collect();
        let (m, sd) = torque_stats(&sq).unwrap();
        assert!(m.abs() < 1e-15);
        assert!((sd - 0.5).abs() < 1e-15);
    }

    #[test]
    fn f32_path_agrees() {
        let pts: Vec<(f32, f32)> = (1..=8).map(|i| (i as f32, 2.0 * i as f32 + 1.0)).collect();
        let fit = linear_fit(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-5);
        assert!((energetic_add(&[50.0f32, 50.0]) - 53.0103).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn leq_and_energetic_add_are_inverse(a in 20.0f64..90.0, d in -40.0f64..40.0) {
            // beyond ~40 dB apart the subtraction loses digits to cancellation
            let b = a + d;
            let total = energetic_add(&[a, b]);
            prop_assert!((leq_subtract(total, a).unwrap() - b).abs() < 1e-9);
        }

        #[test]
        fn grid_has_constant_ratio(lo in 0.01f64..10.0, span in 1.5f64..1000.0, n in 2usize..60) {
            let g = log_space_grid(lo, lo * span, n).unwrap();
            let r0 = g[1] / g[0];
            for w in g.windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!(((w[1] / w[0]) / r0 - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn collinear_points_have_unit_r2(m in -5.0f64..5.0, c in -2.0f64..2.0) {
            prop_assume!(m.abs() > 1e-3);
            let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.3, m * i as f64 * 0.3 + c)).collect();
            let fit = linear_fit(&pts).unwrap();
            prop_assert!((fit.r_squared - 1.0).abs() < 1e-12);
        }

        #[test]
        fn crossings_survive_resampling(tau in 100.0f64..800.0, factor in 2usize..5) {
            let coarse_dt = 2.0;
            let f = |t: f64| 23.0 + 100.0 * (1.0 - (-t / tau).exp());
            let coarse: Vec<(f64, f64)> = (0..3000).map(|i| { let t = i as f64 * coarse_dt; (t, f(t)) }).collect();
            let fine_dt = coarse_dt / factor as f64;
            let fine: Vec<(f64, f64)> = (0..3000 * factor).map(|i| { let t = i as f64 * fine_dt; (t, f(t)) }).collect();
            let a = time_to_threshold(&coarse, 30.0, 80.0).unwrap();
            let b = time_to_threshold(&fine, 30.0, 80.0).unwrap();
            prop_assert!((a - b).abs() < coarse_dt);

            let v = |t: f64| 29.1 - t / tau;
            let coarse: Vec<(f64, f64)> = (0..3000).map(|i| { let t = i as f64 * coarse_dt; (t, v(t)) }).collect();
            let fine: Vec<(f64, f64)> = (0..3000 * factor).map(|i| { let t = i as f64 * fine_dt; (t, v(t)) }).collect();
            let a = runtime_from_log(&coarse, 25.0).unwrap();
            let b = runtime_from_log(&fine, 25.0).unwrap();
            prop_assert!((a - b).abs() < coarse_dt);
        }
    }
}
