//! Discrete-event model of the feed-forward chain and the modulator drive
//! waveform.
//!
//! All times are nanoseconds on one logical clock. A pump pulse may create a
//! pair; the trigger photon is detected immediately, the signal photon runs
//! through the fiber delay. The trigger click requests a gate, which opens
//! after the electronics latency, the programmable delay and the cables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detection::DetectorId;
use crate::error::{invalid, Result};
use crate::exec::{self, rng_for};
use crate::tbs::reflectivity;

/// Speed of light in m/ns.
pub const C_M_PER_NS: f64 = 0.299_792_458;

/// Fraction of a raised-cosine edge spent between its 10% and 90% levels.
pub fn raised_cosine_10_90_fraction() -> f64 {
    1.0 - 2.0 * 0.8f64.acos() / PI
}

fn raised_cosine(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        0.5 * (1.0 - (PI * u).cos())
    }
}

/// Gate waveform applied to both crystals (with opposite polarity).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EomDrive {
    pub on_time_ns: f64,
    /// 10%-90% rise time.
    pub rise_time_ns: f64,
    /// 90%-10% fall time.
    pub fall_time_ns: f64,
    /// Trigger-to-gate delay shown on switching traces.
    pub offset_ns: f64,
    pub target_phase_rad: f64,
}

impl Default for EomDrive {
    fn default() -> Self {
        Self {
            on_time_ns: 20.0,
            rise_time_ns: 5.6,
            fall_time_ns: 5.6,
            offset_ns: 110.4,
            target_phase_rad: PI / 2.0,
        }
    }
}

impl EomDrive {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("on_time_ns", self.on_time_ns),
            ("rise_time_ns", self.rise_time_ns),
            ("fall_time_ns", self.fall_time_ns),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.offset_ns.is_finite() && self.offset_ns >= 0.0) {
            return Err(invalid(format!("offset_ns must be >= 0, got {}", self.offset_ns)));
        }
        if !self.target_phase_rad.is_finite() {
            return Err(invalid("target_phase_rad must be finite"));
        }
        if self.on_time_ns < self.rise_time_ns + self.fall_time_ns {
            return Err(invalid(format!(
                "on_time_ns {} is shorter than rise_time_ns {} + fall_time_ns {}",
                self.on_time_ns, self.rise_time_ns, self.fall_time_ns
            )));
        }
        Ok(())
    }

    /// Full 0-100% duration of the rising edge.
    pub fn rise_span_ns(&self) -> f64 {
        self.rise_time_ns / raised_cosine_10_90_fraction()
    }

    pub fn fall_span_ns(&self) -> f64 {
        self.fall_time_ns / raised_cosine_10_90_fraction()
    }

    /// Phase seen at time `t` by light in a gate opened at `gate_open`.
    pub fn phase_at(&self, gate_open: f64, t: f64) -> f64 {
        let x = t - gate_open;
        if x <= 0.0 || x >= self.on_time_ns {
            return 0.0;
        }
        let up = raised_cosine(x / self.rise_span_ns());
        let down = raised_cosine((self.on_time_ns - x) / self.fall_span_ns());
        self.target_phase_rad * up.min(down)
    }

    /// Whether `t` falls on the flat top, where [`phase_at`](Self::phase_at)
    /// returns exactly the target.
    pub fn on_plateau(&self, gate_open: f64, t: f64) -> bool {
        let x = t - gate_open;
        x >= self.rise_span_ns() && x <= self.on_time_ns - self.fall_span_ns()
    }

    pub fn plateau_width_ns(&self) -> f64 {
        (self.on_time_ns - self.rise_span_ns() - self.fall_span_ns()).max(0.0)
    }

    /// Offset from gate opening to the middle of the flat top.
    pub fn plateau_center_ns(&self) -> f64 {
        0.5 * (self.rise_span_ns() + self.on_time_ns - self.fall_span_ns())
    }

    /// Samples one gate opened at `offset_ns`, from 0 to `span_ns`.
    pub fn trace(&self, dt_ns: f64, span_ns: f64) -> Result<SampledTrace> {
        if !(dt_ns > 0.0 && span_ns > 0.0) {
            return Err(invalid("trace step and span must be > 0"));
        }
        let n = (span_ns / dt_ns).round() as usize + 1;
        let samples = (0..n)
            .map(|k| self.phase_at(self.offset_ns, k as f64 * dt_ns))
            .collect();
        Ok(SampledTrace {
            start_ns: 0.0,
            dt_ns,
            samples,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainDelays {
    pub fiber_length_m: f64,
    pub fiber_group_index: f64,
    /// Trigger detector plus discriminator latency.
    pub detector_latency_ns: f64,
    /// Programmable delay; `None` centers the photon on the gate's flat top.
    pub fpga_delay_ns: Option<f64>,
    pub cable_delay_ns: f64,
}

impl Default for ChainDelays {
    fn default() -> Self {
        Self {
            fiber_length_m: 100.0,
            fiber_group_index: 1.468,
            detector_latency_ns: 110.4,
            fpga_delay_ns: None,
            cable_delay_ns: 0.0,
        }
    }
}

impl ChainDelays {
    pub fn fiber_delay_ns(&self) -> f64 {
        self.fiber_length_m * self.fiber_group_index / C_M_PER_NS
    }

    /// The programmable delay in effect for `drive`.
    pub fn resolved_fpga_delay(&self, drive: &EomDrive) -> f64 {
        self.fpga_delay_ns.unwrap_or_else(|| {
            self.fiber_delay_ns()
                - self.detector_latency_ns
                - self.cable_delay_ns
                - drive.plateau_center_ns()
        })
    }

    /// Delay from trigger click to gate opening.
    pub fn gate_delay_ns(&self, drive: &EomDrive) -> f64 {
        self.detector_latency_ns + self.resolved_fpga_delay(drive) + self.cable_delay_ns
    }

    pub fn validate(&self, drive: &EomDrive) -> Result<()> {
        for (name, v) in [
            ("fiber_length_m", self.fiber_length_m),
            ("fiber_group_index", self.fiber_group_index),
            ("detector_latency_ns", self.detector_latency_ns),
            ("cable_delay_ns", self.cable_delay_ns),
            ("fpga_delay_ns", self.resolved_fpga_delay(drive)),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimelineConfig {
    pub pump_period_ns: f64,
    pub p_pair: f64,
    pub trigger_efficiency: f64,
    /// Efficiency of the two detectors behind the splitter.
    pub signal_efficiency: f64,
    pub max_gate_rate_hz: f64,
    pub delays: ChainDelays,
    pub drive: EomDrive,
}

impl Default for TimelineConfig {
    fn default() -> Self {
        Self {
            pump_period_ns: 12.5,
            p_pair: 0.001,
            trigger_efficiency: 1.0,
            signal_efficiency: 1.0,
            max_gate_rate_hz: 2.5e6,
            delays: ChainDelays::default(),
            drive: EomDrive::default(),
        }
    }
}

impl TimelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pump_period_ns.is_finite() && self.pump_period_ns > 0.0) {
            return Err(invalid(format!("pump_period_ns must be > 0, got {}", self.pump_period_ns)));
        }
        for (name, p) in [
            ("p_pair", self.p_pair),
            ("trigger_efficiency", self.trigger_efficiency),
            ("signal_efficiency", self.signal_efficiency),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.max_gate_rate_hz.is_finite() && self.max_gate_rate_hz > 0.0) {
            return Err(invalid(format!("max_gate_rate_hz must be > 0, got {}", self.max_gate_rate_hz)));
        }
        self.drive.validate()?;
        self.delays.validate(&self.drive)
    }

    pub fn min_gate_spacing_ns(&self) -> f64 {
        1e9 / self.max_gate_rate_hz
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PumpPulse,
    PairCreated,
    TriggerClick,
    GateOpen,
    GateClose,
    Photon2AtTbs,
    DetectorClick,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::PumpPulse => "pump_pulse",
            EventKind::PairCreated => "pair_created",
            EventKind::TriggerClick => "trigger_click",
            EventKind::GateOpen => "gate_open",
            EventKind::GateClose => "gate_close",
            EventKind::Photon2AtTbs => "photon2_at_tbs",
            EventKind::DetectorClick => "detector_click",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Payload {
    Pulse { pulse: u64 },
    Gate { pulse: u64, gate: usize },
    Photon { pulse: u64, phase: f64 },
    Click { pulse: u64, detector: DetectorId },
}

impl Payload {
    pub fn pulse(&self) -> u64 {
        match *self {
            Payload::Pulse { pulse }
            | Payload::Gate { pulse, .. }
            | Payload::Photon { pulse, .. }
            | Payload::Click { pulse, .. } => pulse,
        }
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Pulse { pulse } => write!(f, "pulse={pulse}"),
            Payload::Gate { pulse, gate } => write!(f, "pulse={pulse};gate={gate}"),
            Payload::Photon { pulse, phase } => write!(f, "pulse={pulse};phase={phase:?}"),
            Payload::Click { pulse, detector } => write!(f, "pulse={pulse};detector={detector:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimelineEvent {
    pub time_ns: f64,
    pub kind: EventKind,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Rejection {
    pub time_ns: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventTimeline {
    pub events: Vec<TimelineEvent>,
    /// Gate requests dropped by the rate limiter.
    pub rejections: Vec<Rejection>,
}

impl EventTimeline {
    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TimelineEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_ns", "kind", "payload"])?;
        for e in &self.events {
            out.write_record([format!("{:?}", e.time_ns), e.kind.name().to_string(), e.payload.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Greedy gate-request limiter: a request is accepted when at least the
/// minimum spacing has passed since the last accepted one.
#[derive(Clone, Debug)]
pub struct RateLimiter {
    min_spacing_ns: f64,
    last: Option<f64>,
}

impl RateLimiter {
    pub fn new(min_spacing_ns: f64) -> Self {
        Self {
            min_spacing_ns,
            last: None,
        }
    }

    pub fn offer(&mut self, t: f64) -> std::result::Result<(), Rejection> {
        match self.last {
            Some(prev) if t - prev < self.min_spacing_ns - 1e-9 => Err(Rejection {
                time_ns: t,
                reason: format!(
                    "{:.3} ns after accepted request at {prev} ns, minimum spacing {} ns",
                    t - prev,
                    self.min_spacing_ns
                ),
            }),
            _ => {
                self.last = Some(t);
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateLimitOutcome {
    pub accepted: Vec<f64>,
    pub rejected: Vec<Rejection>,
}

pub fn rate_limit(requests: &[f64], min_spacing_ns: f64) -> Result<RateLimitOutcome> {
    if requests.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("gate requests must be sorted by time"));
    }
    let mut limiter = RateLimiter::new(min_spacing_ns);
    let mut out = RateLimitOutcome::default();
    for &t in requests {
        match limiter.offer(t) {
            Ok(()) => out.accepted.push(t),
            Err(r) => out.rejected.push(r),
        }
    }
    Ok(out)
}

struct Queued {
    time: f64,
    seq: u64,
    kind: EventKind,
    payload: Payload,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Runs the chain for all pump pulses in `[0, duration_ns)` and follows every
/// consequence to completion.
pub fn run_timeline(config: &TimelineConfig, duration_ns: f64, seed: u64) -> Result<EventTimeline> {
    config.validate()?;
    if !(duration_ns.is_finite() && duration_ns > 0.0) {
        return Err(invalid(format!("duration must be > 0, got {duration_ns}")));
    }
    let mut rng = rng_for(seed, &[0x7469_6d65]);
    let drive = &config.drive;
    let gate_delay = config.delays.gate_delay_ns(drive);
    let fiber = config.delays.fiber_delay_ns();
    let mut limiter = RateLimiter::new(config.min_gate_spacing_ns());

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Queued>, time: f64, kind: EventKind, payload: Payload| {
        heap.push(Queued {
            time,
            seq,
            kind,
            payload,
        });
        seq += 1;
    };
    push(&mut heap, 0.0, EventKind::PumpPulse, Payload::Pulse { pulse: 0 });

    let mut timeline = EventTimeline::default();
    let mut open_gates: Vec<f64> = Vec::new();
    let mut next_gate = 0usize;

    while let Some(ev) = heap.pop() {
        let t = ev.time;
        let pulse = ev.payload.pulse();
        match ev.kind {
            EventKind::PumpPulse => {
                let next = (pulse + 1) as f64 * config.pump_period_ns;
                if next < duration_ns {
                    push(&mut heap, next, EventKind::PumpPulse, Payload::Pulse { pulse: pulse + 1 });
                }
                if rng.random::<f64>() < config.p_pair {
                    push(&mut heap, t, EventKind::PairCreated, Payload::Pulse { pulse });
                }
            }
            EventKind::PairCreated => {
                if rng.random::<f64>() < config.trigger_efficiency {
                    push(&mut heap, t, EventKind::TriggerClick, Payload::Pulse { pulse });
                }
                push(&mut heap, t + fiber, EventKind::Photon2AtTbs, Payload::Pulse { pulse });
            }
            EventKind::TriggerClick => match limiter.offer(t) {
                Ok(()) => {
                    let gate = next_gate;
                    next_gate += 1;
                    push(&mut heap, t + gate_delay, EventKind::GateOpen, Payload::Gate { pulse, gate });
                }
                Err(r) => timeline.rejections.push(r),
            },
            EventKind::GateOpen => {
                open_gates.push(t);
                push(&mut heap, t + drive.on_time_ns, EventKind::GateClose, ev.payload);
            }
            EventKind::GateClose => {
                let opened = t - drive.on_time_ns;
                if let Some(k) = open_gates.iter().position(|&g| (g - opened).abs() < 1e-9) {
                    open_gates.swap_remove(k);
                }
            }
            EventKind::Photon2AtTbs => {
                let phase = open_gates
                    .iter()
                    .map(|&g| drive.phase_at(g, t))
                    .fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
                timeline.events.push(TimelineEvent {
                    time_ns: t,
                    kind: ev.kind,
                    payload: Payload::Photon { pulse, phase },
                });
                let detector = if rng.random::<f64>() < reflectivity(phase) {
                    DetectorId::D2
                } else {
                    DetectorId::D1
                };
                if rng.random::<f64>() < config.signal_efficiency {
                    push(&mut heap, t, EventKind::DetectorClick, Payload::Click { pulse, detector });
                }
                continue;
            }
            EventKind::DetectorClick => {}
        }
        timeline.events.push(TimelineEvent {
            time_ns: t,
            kind: ev.kind,
            payload: ev.payload,
        });
    }
    Ok(timeline)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhotonAlignment {
    pub pulse: u64,
    pub arrival_ns: f64,
    /// Pulse whose trigger opened the gate the photon met, if any.
    pub gate_pulse: Option<u64>,
    pub phase: f64,
    pub on_plateau: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AlignmentReport {
    /// Heralded photons whose own trigger opened a gate.
    pub photons: Vec<PhotonAlignment>,
    /// Heralded photons whose gate request was rate limited.
    pub heralds_without_gate: usize,
    pub on_plateau: usize,
    pub on_plateau_fraction: Option<f64>,
    /// Photons switched by a gate that a different pulse triggered.
    pub stray_gated: usize,
    pub stray_fraction: Option<f64>,
}

/// Phase experienced by each heralded photon and the flat-top fraction.
pub fn gate_alignment(timeline: &EventTimeline, drive: &EomDrive) -> AlignmentReport {
    let mut gates: Vec<(f64, u64)> = timeline
        .of_kind(EventKind::GateOpen)
        .map(|e| (e.time_ns, e.payload.pulse()))
        .collect();
    gates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gate_of_pulse: Vec<u64> = gates.iter().map(|g| g.1).collect();
    gate_of_pulse.sort_unstable();
    let mut heralded: Vec<u64> = timeline
        .of_kind(EventKind::TriggerClick)
        .map(|e| e.payload.pulse())
        .collect();
    heralded.sort_unstable();

    let mut report = AlignmentReport::default();
    let mut switched = 0usize;
    for e in timeline.of_kind(EventKind::Photon2AtTbs) {
        let (pulse, t) = (e.payload.pulse(), e.time_ns);
        let k = gates.partition_point(|g| g.0 <= t);
        let gate = (k > 0)
            .then(|| gates[k - 1])
            .filter(|&(open, _)| t < open + drive.on_time_ns);
        let phase = gate.map_or(0.0, |(open, _)| drive.phase_at(open, t));
        if phase != 0.0 {
            switched += 1;
            if gate.is_some_and(|g| g.1 != pulse) {
                report.stray_gated += 1;
            }
        }
        if heralded.binary_search(&pulse).is_err() {
            continue;
        }
        if gate_of_pulse.binary_search(&pulse).is_err() {
            report.heralds_without_gate += 1;
            continue;
        }
        let on_plateau = gate.is_some_and(|(open, g)| g == pulse && drive.on_plateau(open, t));
        report.on_plateau += on_plateau as usize;
        report.photons.push(PhotonAlignment {
            pulse,
            arrival_ns: t,
            gate_pulse: gate.map(|g| g.1),
            phase,
            on_plateau,
        });
    }
    if !report.photons.is_empty() {
        report.on_plateau_fraction = Some(report.on_plateau as f64 / report.photons.len() as f64);
    }
    if switched > 0 {
        report.stray_fraction = Some(report.stray_gated as f64 / switched as f64);
    }
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub fpga_delay_ns: f64,
    pub gated_heralds: usize,
    pub on_plateau_fraction: f64,
    pub mean_phase: f64,
}

/// Re-runs the timeline (same seed) for each programmable delay.
pub fn fpga_sweep(config: &TimelineConfig, delays_ns: &[f64], duration_ns: f64, seed: u64) -> Result<Vec<SweepPoint>> {
    exec::map_indexed(delays_ns.len(), |i| {
        let mut cfg = *config;
        cfg.delays.fpga_delay_ns = Some(delays_ns[i]);
        let timeline = run_timeline(&cfg, duration_ns, seed)?;
        let report = gate_alignment(&timeline, &cfg.drive);
        let n = report.photons.len();
        let mean_phase = if n == 0 {
            0.0
        } else {
            report.photons.iter().map(|p| p.phase).sum::<f64>() / n as f64
        };
        Ok(SweepPoint {
            fpga_delay_ns: delays_ns[i],
            gated_heralds: n,
            on_plateau_fraction: report.on_plateau_fraction.unwrap_or(0.0),
            mean_phase,
        })
    })
    .into_iter()
    .collect()
}

/// Width of the delay range whose on-plateau fraction reaches `threshold`:
/// qualifying points times the sweep step.
pub fn sweep_plateau_width(points: &[SweepPoint], threshold: f64) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let step = (points[1].fpga_delay_ns - points[0].fpga_delay_ns).abs();
    points.iter().filter(|p| p.gated_heralds > 0 && p.on_plateau_fraction >= threshold).count() as f64 * step
}

/// Uniformly sampled waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledTrace {
    pub start_ns: f64,
    pub dt_ns: f64,
    pub samples: Vec<f64>,
}

impl SampledTrace {
    pub fn time(&self, k: usize) -> f64 {
        self.start_ns + k as f64 * self.dt_ns
    }

    fn reversed(&self) -> Self {
        let mut samples = self.samples.clone();
        samples.reverse();
        Self {
            start_ns: 0.0,
            dt_ns: self.dt_ns,
            samples,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_ns", "phase_rad"])?;
        for (k, v) in self.samples.iter().enumerate() {
            out.write_record([format!("{:?}", self.time(k)), format!("{v:?}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn extent(trace: &SampledTrace) -> Result<(f64, f64)> {
    let lo = trace.samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = trace.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if trace.samples.len() < 2 || !(hi > lo) {
        return Err(invalid("trace is flat"));
    }
    Ok((lo, hi))
}

/// Linear-interpolated time between the first 10% and the following 90%
/// crossing.
pub fn measure_rise_time(trace: &SampledTrace) -> Result<f64> {
    let (lo, hi) = extent(trace)?;
    let s = &trace.samples;
    let level = |f: f64| lo + f * (hi - lo);
    let crossing = |from: usize, y: f64| -> Option<(usize, f64)> {
        (from.max(1)..s.len()).find(|&k| s[k] >= y).map(|k| {
            let frac = if s[k] == s[k - 1] { 0.0 } else { (y - s[k - 1]) / (s[k] - s[k - 1]) };
            (k, trace.time(k - 1) + frac.clamp(0.0, 1.0) * trace.dt_ns)
        })
    };
    let (k10, t10) = crossing(0, level(0.1)).ok_or_else(|| invalid("no 10% crossing"))?;
    let (k90, t90) = crossing(k10, level(0.9)).ok_or_else(|| invalid("no 90% crossing"))?;
    if s[k10.saturating_sub(1)..=k90].windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("transition is not monotone"));
    }
    Ok(t90 - t10)
}

/// 90%-10% duration of the last falling edge.
pub fn measure_fall_time(trace: &SampledTrace) -> Result<f64> {
    measure_rise_time(&trace.reversed())
}

/// Span of samples sitting exactly at the trace maximum.
pub fn measure_plateau_width(trace: &SampledTrace) -> Result<f64> {
    let (_, hi) = extent(trace)?;
    let first = trace.samples.iter().position(|&v| v == hi).expect("maximum present");
    let last = trace.samples.iter().rposition(|&v| v == hi).expect("maximum present");
    Ok((last - first) as f64 * trace.dt_ns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_pulse(p_pair: f64) -> TimelineConfig {
        TimelineConfig {
            p_pair,
            ..TimelineConfig::default()
        }
    }

    #[test]
    fn fiber_delay_matches_hand_computation() {
        // 100 m * 1.468 = 146.8 m; 146.8 / 0.299792458 m/ns
        let d = ChainDelays::default().fiber_delay_ns();
        assert!((d - 489.672_091_75).abs() < 1e-6, "{d}");
    }

    #[test]
    fn raised_cosine_edge_fraction() {
        let k = raised_cosine_10_90_fraction();
        assert!((k - 0.590_334_470_601).abs() < 1e-9);
        let u10 = 0.8f64.acos() / PI;
        assert!((raised_cosine(u10) - 0.1).abs() < 1e-12);
        assert!((raised_cosine(1.0 - u10) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn phase_at_examples() {
        let d = EomDrive::default();
        assert_eq!(d.phase_at(100.0, 99.0), 0.0);
        assert_eq!(d.phase_at(100.0, 100.0 + d.plateau_center_ns()), d.target_phase_rad);
        assert_eq!(d.phase_at(100.0, 121.0), 0.0);
        assert!(d.on_plateau(100.0, 100.0 + d.plateau_center_ns()));
    }

    #[test]
    fn sampled_edges_match_configuration() {
        let d = EomDrive::default();
        let tr = d.trace(0.1, 160.0).unwrap();
        let rise = measure_rise_time(&tr).unwrap();
        let fall = measure_fall_time(&tr).unwrap();
        assert!((rise - 5.6).abs() < 0.1, "{rise}");
        assert!((fall - rise).abs() < 0.1, "{fall}");
        let plateau = measure_plateau_width(&tr).unwrap();
        assert!((plateau - d.plateau_width_ns()).abs() <= 0.1 + 1e-9);
    }

    #[test]
    fn linear_ramp_rise_is_eighty_percent_of_span() {
        let dt = 0.01;
        let samples: Vec<f64> = (0..1000)
            .map(|k| ((k as f64 * dt - 1.0) / 7.0).clamp(0.0, 1.0))
            .collect();
        let tr = SampledTrace { start_ns: 0.0, dt_ns: dt, samples };
        assert!((measure_rise_time(&tr).unwrap() - 5.6).abs() < 1e-9);
    }

    #[test]
    fn step_rise_within_one_sample() {
        let tr = SampledTrace {
            start_ns: 0.0,
            dt_ns: 0.1,
            samples: vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        };
        assert!(measure_rise_time(&tr).unwrap() <= 0.1);
    }

    #[test]
    fn bad_traces_rejected() {
        let flat = SampledTrace { start_ns: 0.0, dt_ns: 0.1, samples: vec![1.0; 20] };
        assert!(measure_rise_time(&flat).is_err());
        let wobble = SampledTrace {
            start_ns: 0.0,
            dt_ns: 0.1,
            samples: vec![0.0, 0.2, 0.5, 0.3, 0.95, 1.0],
        };
        assert!(measure_rise_time(&wobble).is_err());
    }

    #[test]
    fn drive_validation_names_both_values() {
        let d = EomDrive { on_time_ns: 8.0, ..EomDrive::default() };
        let msg = d.validate().unwrap_err().to_string();
        assert!(msg.contains('8') && msg.contains("5.6"), "{msg}");
        assert!(EomDrive { rise_time_ns: 0.0, ..EomDrive::default() }.validate().is_err());
    }

    #[test]
    fn no_pairs_gives_only_pump_pulses() {
        let tl = run_timeline(&one_pulse(0.0), 1000.0, 1).unwrap();
        assert_eq!(tl.count(EventKind::PumpPulse), 80);
        assert_eq!(tl.events.len(), 80);
    }

    #[test]
    fn single_pulse_chain() {
        let tl = run_timeline(&one_pulse(1.0), 12.5, 1).unwrap();
        for kind in [
            EventKind::PumpPulse,
            EventKind::PairCreated,
            EventKind::TriggerClick,
            EventKind::GateOpen,
            EventKind::GateClose,
            EventKind::Photon2AtTbs,
            EventKind::DetectorClick,
        ] {
            assert_eq!(tl.count(kind), 1, "{kind:?}");
        }
        let photon = tl.of_kind(EventKind::Photon2AtTbs).next().unwrap();
        assert!((photon.time_ns - ChainDelays::default().fiber_delay_ns()).abs() < 1e-9);
        let Payload::Photon { phase, .. } = photon.payload else { panic!() };
        assert_eq!(phase, EomDrive::default().target_phase_rad);
    }

    #[test]
    fn causality_and_ordering() {
        let cfg = TimelineConfig { p_pair: 0.05, trigger_efficiency: 0.7, ..TimelineConfig::default() };
        let tl = run_timeline(&cfg, 50_000.0, 3).unwrap();
        assert!(tl.events.windows(2).all(|w| w[0].time_ns <= w[1].time_ns));
        assert!(tl.events.iter().all(|e| e.time_ns >= 0.0));
        let triggers: std::collections::HashMap<u64, f64> = tl
            .of_kind(EventKind::TriggerClick)
            .map(|e| (e.payload.pulse(), e.time_ns))
            .collect();
        for g in tl.of_kind(EventKind::GateOpen) {
            assert!(g.time_ns >= triggers[&g.payload.pulse()]);
        }
        assert!(!tl.rejections.is_empty());
    }

    #[test]
    fn perfect_trigger_heralds_every_photon() {
        let cfg = TimelineConfig { p_pair: 0.1, ..TimelineConfig::default() };
        let tl = run_timeline(&cfg, 20_000.0, 9).unwrap();
        let triggers: Vec<u64> = tl.of_kind(EventKind::TriggerClick).map(|e| e.payload.pulse()).collect();
        for p in tl.of_kind(EventKind::Photon2AtTbs) {
            assert!(triggers.contains(&p.payload.pulse()));
        }
    }

    #[test]
    fn timeline_is_deterministic() {
        let cfg = TimelineConfig { p_pair: 0.05, ..TimelineConfig::default() };
        let a = run_timeline(&cfg, 20_000.0, 4).unwrap();
        let b = run_timeline(&cfg, 20_000.0, 4).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert!(String::from_utf8(x).unwrap().starts_with("time_ns,kind,payload\n"));
    }

    #[test]
    fn centered_gate_puts_photons_on_plateau() {
        let cfg = TimelineConfig { p_pair: 0.01, ..TimelineConfig::default() };
        let tl = run_timeline(&cfg, 200_000.0, 2).unwrap();
        let r = gate_alignment(&tl, &cfg.drive);
        assert!(!r.photons.is_empty());
        assert_eq!(r.on_plateau_fraction, Some(1.0));
        assert!(r.photons.iter().all(|p| p.phase == cfg.drive.target_phase_rad));
    }

    #[test]
    fn gate_missed_when_delay_off_by_30ns() {
        let mut cfg = TimelineConfig { p_pair: 0.01, ..TimelineConfig::default() };
        let centered = cfg.delays.resolved_fpga_delay(&cfg.drive);
        cfg.delays.fpga_delay_ns = Some(centered + 30.0);
        let tl = run_timeline(&cfg, 100_000.0, 2).unwrap();
        let r = gate_alignment(&tl, &cfg.drive);
        assert!(!r.photons.is_empty());
        assert!(r.photons.iter().all(|p| p.phase == 0.0));
        assert_eq!(r.on_plateau_fraction, Some(0.0));
    }

    #[test]
    fn empty_timeline_gives_empty_report() {
        let r = gate_alignment(&EventTimeline::default(), &EomDrive::default());
        assert!(r.photons.is_empty());
        assert_eq!(r.on_plateau_fraction, None);
    }

    #[test]
    fn neighbor_pulse_photons_are_switched_at_rate_p_pair() {
        // photon 4 ns into the gate: the next pulse's photon lands at 16.5 ns,
        // still inside the falling edge
        let mut cfg = TimelineConfig { p_pair: 0.01, ..TimelineConfig::default() };
        let d = cfg.delays;
        cfg.delays.fpga_delay_ns = Some(d.fiber_delay_ns() - d.detector_latency_ns - 4.0);
        let tl = run_timeline(&cfg, 4.0e7, 8).unwrap();
        let r = gate_alignment(&tl, &cfg.drive);
        let f = r.stray_fraction.unwrap();
        assert!(r.stray_gated > 100);
        let expected = cfg.p_pair / (1.0 + cfg.p_pair);
        let sd = (expected / r.photons.len() as f64).sqrt();
        assert!((f - expected).abs() < 4.0 * sd, "{f}");

        let centered = run_timeline(&TimelineConfig { p_pair: 0.01, ..TimelineConfig::default() }, 4.0e6, 8).unwrap();
        assert_eq!(gate_alignment(&centered, &cfg.drive).stray_gated, 0);
    }

    #[test]
    fn rate_limit_examples() {
        let ok = rate_limit(&[0.0, 500.0], 400.0).unwrap();
        assert_eq!(ok.accepted.len(), 2);
        let dense: Vec<f64> = (0..10).map(|k| k as f64 * 200.0).collect();
        let r = rate_limit(&dense, 400.0).unwrap();
        assert_eq!(r.accepted, vec![0.0, 400.0, 800.0, 1200.0, 1600.0]);
        assert_eq!(r.rejected.len(), 5);
        assert!(r.rejected[0].reason.contains("400"));
        assert_eq!(rate_limit(&[], 400.0).unwrap(), RateLimitOutcome::default());
        assert!(rate_limit(&[5.0, 1.0], 400.0).is_err());
    }

    #[test]
    fn sweep_width_counts_qualifying_steps() {
        let cfg = TimelineConfig { p_pair: 0.01, ..TimelineConfig::default() };
        let centered = cfg.delays.resolved_fpga_delay(&cfg.drive);
        let delays: Vec<f64> = (-15..=15).map(|k| centered + k as f64).collect();
        let pts = fpga_sweep(&cfg, &delays, 100_000.0, 1).unwrap();
        let w = sweep_plateau_width(&pts, 0.999);
        assert!((w - cfg.drive.plateau_width_ns()).abs() <= 1.0, "{w}");
    }

    /// Greedy-spacing oracle: accepted set is built independently by walking
    /// the requests with a running "next allowed" time.
    fn greedy_oracle(times: &[f64], spacing: f64) -> Vec<f64> {
        let mut next_allowed = f64::NEG_INFINITY;
        let mut out = Vec::new();
        for &t in times {
            if t >= next_allowed - 1e-9 {
                out.push(t);
                next_allowed = t + spacing;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn limiter_matches_greedy_oracle(mut times in prop::collection::vec(0.0f64..1e5, 0..200)) {
            times.sort_by(f64::total_cmp);
            let r = rate_limit(&times, 400.0).unwrap();
            prop_assert_eq!(r.accepted.clone(), greedy_oracle(&times, 400.0));
            prop_assert_eq!(r.accepted.len() + r.rejected.len(), times.len());
            prop_assert!(r.accepted.windows(2).all(|w| w[1] - w[0] >= 400.0 - 1e-9));
        }

        #[test]
        fn phase_bounded_by_target(t in -10.0f64..40.0, target in 0.0f64..4.0) {
            let d = EomDrive { target_phase_rad: target, ..EomDrive::default() };
            let p = d.phase_at(0.0, t);
            prop_assert!((0.0..=target).contains(&p));
        }
    }
}
