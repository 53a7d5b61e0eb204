//! Interferometer stabilization: phase drift, the He-Ne monitor, a discrete
//! PID controller and the piezo actuator.
//!
//! The monitor fringe has zero slope at its top, so the monitor beam carries a
//! fixed extra phase putting the signal lock point (`φ = 0`, full
//! transmission `a -> f`) on the rising slope of the monitor fringe, at half
//! intensity. The controller holds the monitor at 0.5 and the residual is
//! reported as the signal-wavelength phase.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::{self, rng_for};

pub const SIGNAL_WAVELENGTH_NM: f64 = 808.0;
pub const HENE_WAVELENGTH_NM: f64 = 633.0;

/// Monitor phase per unit of signal phase.
pub fn monitor_scale() -> f64 {
    SIGNAL_WAVELENGTH_NM / HENE_WAVELENGTH_NM
}

/// Normalized monitor intensity for a given signal-wavelength phase.
pub fn hene_signal(phi_signal: f64) -> f64 {
    0.5 * (1.0 + (phi_signal * monitor_scale()).cos())
}

/// Signal-phase offset of the monitor beam that puts `φ = 0` at half
/// intensity on the rising slope.
pub fn monitor_bias() -> f64 {
    -FRAC_PI_2 / monitor_scale()
}

/// What the photodiode reads when the signal phase is `phi`.
pub fn monitor_reading(phi: f64) -> f64 {
    hene_signal(phi + monitor_bias())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// `magnitude` in rad/√s.
    RandomWalk,
    /// Amplitude `magnitude`, period `timescale_s`.
    Sinusoidal,
    /// Jump of `magnitude` at `timescale_s`.
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftModel {
    pub kind: DriftKind,
    pub magnitude: f64,
    pub timescale_s: f64,
}

impl DriftModel {
    pub fn none() -> Self {
        Self {
            kind: DriftKind::Step,
            magnitude: 0.0,
            timescale_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return Err(invalid(format!("drift magnitude must be >= 0, got {}", self.magnitude)));
        }
        let needs_timescale = matches!(self.kind, DriftKind::Sinusoidal);
        if !self.timescale_s.is_finite() || self.timescale_s < 0.0 || (needs_timescale && self.timescale_s == 0.0) {
            return Err(invalid(format!("drift timescale {} s is not usable", self.timescale_s)));
        }
        Ok(())
    }
}

/// Produces the drift phase sample by sample.
struct DriftProcess {
    model: DriftModel,
    dt: f64,
    walk: f64,
    step: Normal<f64>,
}

impl DriftProcess {
    fn new(model: DriftModel, dt: f64) -> Self {
        let sd = model.magnitude * dt.sqrt();
        Self {
            model,
            dt,
            walk: 0.0,
            step: Normal::new(0.0, sd).expect("finite sd"),
        }
    }

    fn at<R: Rng + ?Sized>(&mut self, n: u64, rng: &mut R) -> f64 {
        let t = n as f64 * self.dt;
        match self.model.kind {
            DriftKind::RandomWalk => {
                if n > 0 {
                    self.walk += self.step.sample(rng);
                }
                self.walk
            }
            DriftKind::Sinusoidal => self.model.magnitude * (2.0 * PI * t / self.model.timescale_s).sin(),
            DriftKind::Step => {
                if t >= self.model.timescale_s {
                    self.model.magnitude
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    /// Per second.
    pub ki: f64,
    /// Seconds.
    pub kd: f64,
    pub output_min: f64,
    pub output_max: f64,
    pub sample_period_s: f64,
}

impl PidGains {
    /// Gains tuned for the default monitor: integral loop gain ≈ 0.3 and
    /// proportional ≈ 0.1 per sample at 10 µs.
    pub fn tuned() -> Self {
        Self {
            kp: 0.15,
            ki: 47_000.0,
            kd: 0.0,
            output_min: -4.0 * PI,
            output_max: 4.0 * PI,
            sample_period_s: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period_s.is_finite() && self.sample_period_s > 0.0) {
            return Err(invalid(format!("sample period must be > 0, got {}", self.sample_period_s)));
        }
        if !(self.output_min.is_finite() && self.output_max.is_finite() && self.output_min < self.output_max) {
            return Err(invalid(format!(
                "actuator limits [{}, {}] are not a finite interval",
                self.output_min, self.output_max
            )));
        }
        if ![self.kp, self.ki, self.kd].iter().all(|g| g.is_finite()) {
            return Err(invalid("PID gains must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PidState {
    /// Integral contribution, already scaled by `ki`.
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// One controller update. The integral term is clamped to the actuator
/// range and the total output saturates there too.
pub fn pid_step(gains: &PidGains, state: PidState, setpoint: f64, measurement: f64) -> (f64, PidState) {
    let (lo, hi) = (gains.output_min, gains.output_max);
    let e = setpoint - measurement;
    let integral = (state.integral + gains.ki * e * gains.sample_period_s).clamp(lo, hi);
    let derivative = state
        .prev_error
        .map_or(0.0, |p| gains.kd * (e - p) / gains.sample_period_s);
    let out = (gains.kp * e + integral + derivative).clamp(lo, hi);
    (
        out,
        PidState {
            integral,
            prev_error: Some(e),
        },
    )
}

/// Flat lock-simulation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LockSettings {
    pub drift_kind: DriftKind,
    pub drift_magnitude: f64,
    pub drift_timescale_s: f64,
    pub control_enabled: bool,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Symmetric piezo range, ± this value.
    pub output_limit_rad: f64,
    pub sample_period_s: f64,
    pub duration_s: f64,
    /// Keep every n-th sample in the exported trace.
    pub record_every: u64,
    /// Residuals below this count as locked.
    pub lock_threshold_rad: f64,
}

impl Default for LockSettings {
    fn default() -> Self {
        let g = PidGains::tuned();
        Self {
            drift_kind: DriftKind::RandomWalk,
            drift_magnitude: 0.5,
            drift_timescale_s: 0.0,
            control_enabled: true,
            kp: g.kp,
            ki: g.ki,
            kd: g.kd,
            output_limit_rad: g.output_max,
            sample_period_s: g.sample_period_s,
            duration_s: 10.0,
            record_every: 1000,
            lock_threshold_rad: 0.05,
        }
    }
}

impl LockSettings {
    pub fn drift(&self) -> DriftModel {
        DriftModel {
            kind: self.drift_kind,
            magnitude: self.drift_magnitude,
            timescale_s: self.drift_timescale_s,
        }
    }

    pub fn gains(&self) -> PidGains {
        PidGains {
            kp: self.kp,
            ki: self.ki,
            kd: self.kd,
            output_min: -self.output_limit_rad,
            output_max: self.output_limit_rad,
            sample_period_s: self.sample_period_s,
        }
    }

    pub fn samples(&self) -> u64 {
        (self.duration_s / self.sample_period_s).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.drift().validate()?;
        self.gains().validate()?;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid(format!("lock duration must be > 0, got {}", self.duration_s)));
        }
        if self.samples() == 0 {
            return Err(invalid("lock duration is shorter than one sample"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LockSample {
    pub time_s: f64,
    pub phi_true_rad: f64,
    pub monitor_intensity: f64,
    pub actuator_rad: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LockSummary {
    pub rms_residual_rad: f64,
    pub max_abs_residual_rad: f64,
    pub final_residual_rad: f64,
    pub lock_fraction: f64,
    /// Mean `cos φ`: the factor multiplying fringe contrast.
    pub mean_cos_factor: f64,
    pub saturated: bool,
    /// Residual ended beyond the monitor's capture range.
    pub lost_lock: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LockRun {
    pub trace: Vec<LockSample>,
    pub summary: LockSummary,
}

/// Simulates drift plus control; the actuator acts from the next sample on.
pub fn run_lock(settings: &LockSettings, seed: u64) -> Result<LockRun> {
    settings.validate()?;
    let gains = settings.gains();
    let n = settings.samples();
    let mut rng = rng_for(seed, &[0x6c6f_636b]);
    let mut drift = DriftProcess::new(settings.drift(), gains.sample_period_s);
    let mut state = PidState::default();
    let mut actuator = 0.0;
    let mut trace = Vec::with_capacity((n / settings.record_every + 1) as usize);
    let (mut sum_sq, mut sum_cos, mut max_abs, mut locked) = (0.0, 0.0, 0.0f64, 0u64);
    let mut saturated = false;
    let mut phi = 0.0;

    for k in 0..n {
        phi = drift.at(k, &mut rng) + actuator;
        let reading = monitor_reading(phi);
        if k % settings.record_every == 0 {
            trace.push(LockSample {
                time_s: k as f64 * gains.sample_period_s,
                phi_true_rad: phi,
                monitor_intensity: reading,
                actuator_rad: actuator,
            });
        }
        sum_sq += phi * phi;
        sum_cos += phi.cos();
        max_abs = max_abs.max(phi.abs());
        locked += (phi.abs() < settings.lock_threshold_rad) as u64;
        if settings.control_enabled {
            let (out, next) = pid_step(&gains, state, 0.5, reading);
            saturated |= out <= gains.output_min || out >= gains.output_max;
            state = next;
            actuator = out;
        }
    }
    let nf = n as f64;
    Ok(LockRun {
        trace,
        summary: LockSummary {
            rms_residual_rad: (sum_sq / nf).sqrt(),
            max_abs_residual_rad: max_abs,
            final_residual_rad: phi,
            lock_fraction: locked as f64 / nf,
            mean_cos_factor: sum_cos / nf,
            saturated,
            lost_lock: phi.abs() > FRAC_PI_2 / monitor_scale(),
        },
    })
}

pub fn write_lock_csv<W: Write>(trace: &[LockSample], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in trace {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceGrowth {
    pub times_s: Vec<f64>,
    pub variances: Vec<f64>,
    /// Least-squares slope of variance against time through the origin.
    pub slope: f64,
}

/// Ensemble variance of the uncontrolled residual over `trials` seeds.
pub fn free_running_variance(settings: &LockSettings, trials: usize, seed: u64) -> Result<VarianceGrowth> {
    let mut s = *settings;
    s.control_enabled = false;
    s.record_every = 1;
    s.validate()?;
    if trials < 2 {
        return Err(invalid("need at least 2 trials"));
    }
    let runs = exec::map_indexed(trials, |i| run_lock(&s, exec::derive_seed(seed, &[i as u64])))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = runs[0].trace.len();
    let times_s: Vec<f64> = runs[0].trace.iter().map(|p| p.time_s).collect();
    let variances: Vec<f64> = (0..n)
        .map(|k| {
            let xs = runs.iter().map(|r| r.trace[k].phi_true_rad);
            let mean = xs.clone().sum::<f64>() / trials as f64;
            xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
        })
        .collect();
    let sxy: f64 = times_s.iter().zip(&variances).map(|(t, v)| t * v).sum();
    let sxx: f64 = times_s.iter().map(|t| t * t).sum();
    Ok(VarianceGrowth {
        times_s,
        variances,
        slope: sxy / sxx,
    })
}
