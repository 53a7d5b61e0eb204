//! Experiment configuration, validation and artifact-writing runs.
//!
//! A configuration is a TOML document whose keys may be written flat with
//! dotted section prefixes (`tbs.contrast = 0.953`) or as tables. Unknown
//! keys are rejected. Every run writes its CSV artifacts plus a
//! `manifest.json` that echoes the full configuration, so a manifest alone is
//! enough to replay the run.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detection::DetectorModel;
use crate::error::{Error, Result};
use crate::phase_lock::{run_lock, write_lock_csv, LockSettings};
use crate::tbs::{
    fit_visibility, fringe_counts, full_turn, points_from_counts, write_fringe_csv, FringeScan, InputPolarization,
    InterferenceQuality,
};
use crate::timing::{
    fpga_sweep, gate_alignment, measure_fall_time, measure_plateau_width, measure_rise_time, run_timeline,
    sweep_plateau_width, ChainDelays, EomDrive, TimelineConfig,
};
use crate::two_photon::{analyze_dip, delay_grid, hom_delay_scan, hom_dip_visibility, write_hom_csv, HomScan, Wavepacket};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FringeScan,
    HomScan,
    SwitchTrace,
    FeedforwardRun,
    LockSim,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::FringeScan,
        ExperimentKind::HomScan,
        ExperimentKind::SwitchTrace,
        ExperimentKind::FeedforwardRun,
        ExperimentKind::LockSim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FringeScan => "fringe_scan",
            ExperimentKind::HomScan => "hom_scan",
            ExperimentKind::SwitchTrace => "switch_trace",
            ExperimentKind::FeedforwardRun => "feedforward_run",
            ExperimentKind::LockSim => "lock_sim",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub points: usize,
    pub shots_per_point: u64,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            points: 16,
            shots_per_point: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TbsSection {
    pub contrast: f64,
    pub insertion_loss: f64,
    pub phase_jitter_rms_rad: f64,
    /// Use the rms residual of a lock simulation (the `lock` section) as the
    /// phase jitter instead of `phase_jitter_rms_rad`.
    pub jitter_from_lock: bool,
    pub coincidence_window_ns: f64,
}

impl Default for TbsSection {
    fn default() -> Self {
        Self {
            contrast: 0.959,
            insertion_loss: 0.7,
            phase_jitter_rms_rad: 0.0,
            jitter_from_lock: false,
            coincidence_window_ns: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    /// One of `H`, `V`, `D`, `A`, `R`, `L`.
    pub polarization: String,
}

impl Default for InputSection {
    fn default() -> Self {
        Self {
            polarization: "H".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub d1: DetectorModel,
    pub d2: DetectorModel,
    pub d3: DetectorModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomSection {
    pub phi_rad: f64,
    pub delay_min_ns: f64,
    pub delay_max_ns: f64,
    pub points: usize,
    pub shots_per_point: u64,
    /// Squared overlap at optimal delay.
    pub indistinguishability: f64,
    pub center_wavelength_nm: f64,
    pub bandwidth_fwhm_nm: f64,
}

impl Default for HomSection {
    fn default() -> Self {
        Self {
            phi_rad: FRAC_PI_2,
            delay_min_ns: -1.5e-3,
            delay_max_ns: 1.5e-3,
            points: 21,
            shots_per_point: 100_000,
            indistinguishability: 0.887,
            center_wavelength_nm: 808.0,
            bandwidth_fwhm_nm: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub dt_ns: f64,
    pub span_ns: f64,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self {
            dt_ns: 0.1,
            span_ns: 160.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSection {
    pub pump_period_ns: f64,
    pub p_pair: f64,
    pub trigger_efficiency: f64,
    pub signal_efficiency: f64,
    pub max_gate_rate_hz: f64,
    pub duration_ns: f64,
    /// The delay sweep covers the resolved delay ± this.
    pub sweep_half_width_ns: f64,
    pub sweep_step_ns: f64,
}

impl Default for TimingSection {
    fn default() -> Self {
        let t = TimelineConfig::default();
        Self {
            pump_period_ns: t.pump_period_ns,
            p_pair: t.p_pair,
            trigger_efficiency: t.trigger_efficiency,
            signal_efficiency: t.signal_efficiency,
            max_gate_rate_hz: t.max_gate_rate_hz,
            duration_ns: 2.0e6,
            sweep_half_width_ns: 15.0,
            sweep_step_ns: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub scan: ScanSection,
    pub tbs: TbsSection,
    pub input: InputSection,
    pub detector: DetectorSection,
    pub hom: HomSection,
    pub eom: EomDrive,
    pub trace: TraceSection,
    pub delays: ChainDelays,
    pub timing: TimingSection,
    pub lock: LockSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            scan: ScanSection::default(),
            tbs: TbsSection::default(),
            input: InputSection::default(),
            detector: DetectorSection::default(),
            hom: HomSection::default(),
            eom: EomDrive::default(),
            trace: TraceSection::default(),
            delays: ChainDelays::default(),
            timing: TimingSection::default(),
            lock: LockSettings::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn timeline(&self) -> TimelineConfig {
        TimelineConfig {
            pump_period_ns: self.timing.pump_period_ns,
            p_pair: self.timing.p_pair,
            trigger_efficiency: self.timing.trigger_efficiency,
            signal_efficiency: self.timing.signal_efficiency,
            max_gate_rate_hz: self.timing.max_gate_rate_hz,
            delays: self.delays,
            drive: self.eom,
        }
    }

    pub fn wavepacket(&self) -> Wavepacket {
        Wavepacket {
            center_wavelength_nm: self.hom.center_wavelength_nm,
            bandwidth_fwhm_nm: self.hom.bandwidth_fwhm_nm,
            arrival_offset_ns: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{s}: {}: {}", self.field, self.message)
    }
}

struct Checks(Vec<Diagnostic>);

impl Checks {
    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Warning,
            field: field.into(),
            message: message.into(),
        });
    }

    fn probability(&mut self, field: &str, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            self.error(field, format!("{field} = {v} outside [0, 1]"));
        }
    }

    fn positive(&mut self, field: &str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.error(field, format!("{field} = {v} must be > 0"));
        }
    }

    fn module(&mut self, field: &str, r: Result<()>) {
        if let Err(e) = r {
            let msg = match e {
                Error::InvalidInput(m) => m,
                other => other.to_string(),
            };
            self.error(field, msg);
        }
    }
}

/// Schema and physics sanity checks. Never fails; an empty list means the
/// configuration is usable for every experiment kind.
pub fn validate(config: &Config) -> Vec<Diagnostic> {
    let mut c = Checks(Vec::new());

    if config.scan.points < 4 {
        c.error("scan.points", format!("scan.points = {} but a fit needs at least 4", config.scan.points));
    }
    if config.scan.shots_per_point == 0 {
        c.error("scan.shots_per_point", "scan.shots_per_point must be >= 1");
    }

    c.probability("tbs.contrast", config.tbs.contrast);
    c.probability("tbs.insertion_loss", config.tbs.insertion_loss);
    if config.tbs.insertion_loss >= 1.0 {
        c.error("tbs.insertion_loss", "tbs.insertion_loss = 1 leaves no photons");
    }
    if !(config.tbs.phase_jitter_rms_rad.is_finite() && config.tbs.phase_jitter_rms_rad >= 0.0) {
        c.error("tbs.phase_jitter_rms_rad", "tbs.phase_jitter_rms_rad must be >= 0");
    }
    c.positive("tbs.coincidence_window_ns", config.tbs.coincidence_window_ns);

    if InputPolarization::named(&config.input.polarization).is_none() {
        c.error(
            "input.polarization",
            format!("unknown polarization {:?}; use H, V, D, A, R or L", config.input.polarization),
        );
    }

    for (name, d) in [
        ("detector.d1", &config.detector.d1),
        ("detector.d2", &config.detector.d2),
        ("detector.d3", &config.detector.d3),
    ] {
        c.module(name, d.validate());
    }

    let h = &config.hom;
    if !h.phi_rad.is_finite() {
        c.error("hom.phi_rad", "hom.phi_rad must be finite");
    }
    if !(h.delay_min_ns < h.delay_max_ns) {
        c.error(
            "hom.delay_min_ns",
            format!("hom.delay_min_ns {} must be below hom.delay_max_ns {}", h.delay_min_ns, h.delay_max_ns),
        );
    }
    if h.points < 3 {
        c.error("hom.points", format!("hom.points = {} but a dip analysis needs at least 3", h.points));
    }
    if h.shots_per_point == 0 {
        c.error("hom.shots_per_point", "hom.shots_per_point must be >= 1");
    }
    c.probability("hom.indistinguishability", h.indistinguishability);
    c.positive("hom.center_wavelength_nm", h.center_wavelength_nm);
    c.positive("hom.bandwidth_fwhm_nm", h.bandwidth_fwhm_nm);

    c.module("eom", config.eom.validate());

    c.positive("trace.dt_ns", config.trace.dt_ns);
    c.positive("trace.span_ns", config.trace.span_ns);
    if config.trace.dt_ns > config.eom.rise_time_ns.min(config.eom.fall_time_ns) / 10.0 {
        c.warn(
            "trace.dt_ns",
            format!("trace.dt_ns = {} resolves the edges with fewer than 10 samples", config.trace.dt_ns),
        );
    }
    if config.trace.span_ns < config.eom.offset_ns + config.eom.on_time_ns {
        c.warn("trace.span_ns", "trace ends before the gate closes");
    }

    let t = &config.timing;
    c.positive("timing.pump_period_ns", t.pump_period_ns);
    c.probability("timing.p_pair", t.p_pair);
    c.probability("timing.trigger_efficiency", t.trigger_efficiency);
    c.probability("timing.signal_efficiency", t.signal_efficiency);
    c.positive("timing.max_gate_rate_hz", t.max_gate_rate_hz);
    c.positive("timing.duration_ns", t.duration_ns);
    c.positive("timing.sweep_step_ns", t.sweep_step_ns);
    if !(t.sweep_half_width_ns.is_finite() && t.sweep_half_width_ns >= 0.0) {
        c.error("timing.sweep_half_width_ns", "timing.sweep_half_width_ns must be >= 0");
    }
    if config.eom.validate().is_ok() {
        c.module("delays", config.delays.validate(&config.eom));
    }
    let request_rate = t.p_pair.clamp(0.0, 1.0) * t.trigger_efficiency.clamp(0.0, 1.0) / t.pump_period_ns * 1e9;
    if t.pump_period_ns > 0.0 && t.max_gate_rate_hz > 0.0 && request_rate > t.max_gate_rate_hz {
        c.warn(
            "timing.p_pair",
            format!(
                "expected gate request rate {:.3} MHz exceeds the {:.3} MHz modulator limit; excess requests are dropped",
                request_rate / 1e6,
                t.max_gate_rate_hz / 1e6
            ),
        );
    }

    c.module("lock", config.lock.validate());
    c.0
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Summary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_visibility: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_visibility_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_jitter_rms_rad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_coincidences: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hom_visibility: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hom_visibility_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hom_expected_visibility: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hom_classification: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rise_time_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fall_time_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_width_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fpga_delay_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gated_heralds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_limited_requests: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub on_plateau_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stray_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_plateau_width_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lock_rms_rad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lock_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lock_cos_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lock_saturated: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub parallel: bool,
    pub config: Config,
    pub artifacts: Vec<ArtifactRecord>,
    pub summary: Summary,
}

struct Artifact {
    file: &'static str,
    bytes: Vec<u8>,
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn fringe(config: &Config) -> Result<(Vec<Artifact>, Summary)> {
    let jitter = if config.tbs.jitter_from_lock {
        run_lock(&config.lock, config.seed)?.summary.rms_residual_rad
    } else {
        config.tbs.phase_jitter_rms_rad
    };
    let d = &config.detector;
    let scan = FringeScan {
        phis: full_turn(config.scan.points),
        input: InputPolarization::named(&config.input.polarization)
            .ok_or_else(|| Error::Config(format!("unknown polarization {}", config.input.polarization)))?,
        quality: InterferenceQuality::new(config.tbs.contrast)?,
        shots_per_point: config.scan.shots_per_point,
        phase_jitter_rms: jitter,
        survival: 1.0 - config.tbs.insertion_loss,
        detectors: [d.d1, d.d2, d.d3],
        coincidence_window_ns: config.tbs.coincidence_window_ns,
        seed: config.seed,
    };
    let table = fringe_counts(&scan)?;
    let points = points_from_counts(&table)?;
    let fit = fit_visibility(&points)?;
    let summary = Summary {
        fitted_visibility: Some(fit.visibility),
        fitted_visibility_sigma: Some(fit.visibility_sigma),
        phase_jitter_rms_rad: Some(jitter),
        total_coincidences: Some(table.total_coincidences()),
        ..Summary::default()
    };
    Ok((
        vec![
            Artifact {
                file: "counts.csv",
                bytes: csv_bytes(|b| table.write_csv(b))?,
            },
            Artifact {
                file: "fringe.csv",
                bytes: csv_bytes(|b| write_fringe_csv(&points, b))?,
            },
        ],
        summary,
    ))
}

fn hom(config: &Config) -> Result<(Vec<Artifact>, Summary)> {
    let h = &config.hom;
    let packet = config.wavepacket();
    let peak_overlap = h.indistinguishability.sqrt();
    let scan = HomScan {
        delays_ns: delay_grid(h.delay_min_ns, h.delay_max_ns, h.points),
        phi: h.phi_rad,
        packets: (packet, packet),
        peak_overlap,
        shots_per_point: h.shots_per_point,
        seed: config.seed,
    };
    let points = hom_delay_scan(&scan)?;
    let dip = analyze_dip(&points)?;
    let summary = Summary {
        hom_visibility: Some(dip.visibility),
        hom_visibility_sigma: Some(dip.visibility_sigma),
        hom_expected_visibility: hom_dip_visibility(h.phi_rad, peak_overlap).ok(),
        hom_classification: Some(dip.classification.label().to_string()),
        ..Summary::default()
    };
    Ok((
        vec![Artifact {
            file: "hom.csv",
            bytes: csv_bytes(|b| write_hom_csv(&points, b))?,
        }],
        summary,
    ))
}

fn switch_trace(config: &Config) -> Result<(Vec<Artifact>, Summary)> {
    let trace = config.eom.trace(config.trace.dt_ns, config.trace.span_ns)?;
    let summary = Summary {
        rise_time_ns: Some(measure_rise_time(&trace)?),
        fall_time_ns: Some(measure_fall_time(&trace)?),
        plateau_width_ns: Some(measure_plateau_width(&trace)?),
        ..Summary::default()
    };
    Ok((
        vec![Artifact {
            file: "waveform.csv",
            bytes: csv_bytes(|b| trace.write_csv(b))?,
        }],
        summary,
    ))
}

#[derive(Serialize)]
struct SweepRow {
    fpga_delay_ns: f64,
    gated_heralds: usize,
    on_plateau_fraction: f64,
    mean_phase_rad: f64,
}

fn feedforward(config: &Config) -> Result<(Vec<Artifact>, Summary)> {
    let tl_config = config.timeline();
    let t = &config.timing;
    let timeline = run_timeline(&tl_config, t.duration_ns, config.seed)?;
    let report = gate_alignment(&timeline, &tl_config.drive);

    let center = tl_config.delays.resolved_fpga_delay(&tl_config.drive);
    let n = (t.sweep_half_width_ns / t.sweep_step_ns).floor() as i64;
    let delays: Vec<f64> = (-n..=n).map(|k| center + k as f64 * t.sweep_step_ns).collect();
    let sweep = fpga_sweep(&tl_config, &delays, t.duration_ns, config.seed)?;

    let summary = Summary {
        fpga_delay_ns: Some(center),
        gated_heralds: Some(report.photons.len()),
        rate_limited_requests: Some(timeline.rejections.len()),
        on_plateau_fraction: report.on_plateau_fraction,
        stray_fraction: report.stray_fraction,
        sweep_plateau_width_ns: Some(sweep_plateau_width(&sweep, 0.999)),
        ..Summary::default()
    };
    let sweep_csv = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        for p in &sweep {
            w.serialize(SweepRow {
                fpga_delay_ns: p.fpga_delay_ns,
                gated_heralds: p.gated_heralds,
                on_plateau_fraction: p.on_plateau_fraction,
                mean_phase_rad: p.mean_phase,
            })?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok((
        vec![
            Artifact {
                file: "timeline.csv",
                bytes: csv_bytes(|b| timeline.write_csv(b))?,
            },
            Artifact {
                file: "sweep.csv",
                bytes: sweep_csv,
            },
        ],
        summary,
    ))
}

fn lock(config: &Config) -> Result<(Vec<Artifact>, Summary)> {
    let run = run_lock(&config.lock, config.seed)?;
    let s = run.summary;
    let summary = Summary {
        lock_rms_rad: Some(s.rms_residual_rad),
        lock_fraction: Some(s.lock_fraction),
        lock_cos_factor: Some(s.mean_cos_factor),
        lock_saturated: Some(s.saturated),
        ..Summary::default()
    };
    Ok((
        vec![Artifact {
            file: "lock.csv",
            bytes: csv_bytes(|b| write_lock_csv(&run.trace, b))?,
        }],
        summary,
    ))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn compute(kind: ExperimentKind, config: &Config) -> Result<(Manifest, Vec<Artifact>)> {
    let (artifacts, summary) = match kind {
        ExperimentKind::FringeScan => fringe(config)?,
        ExperimentKind::HomScan => hom(config)?,
        ExperimentKind::SwitchTrace => switch_trace(config)?,
        ExperimentKind::FeedforwardRun => feedforward(config)?,
        ExperimentKind::LockSim => lock(config)?,
    };
    let manifest = Manifest {
        tool: "tbsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: kind,
        seed: config.seed,
        parallel: crate::exec::parallel_enabled(),
        config: config.clone(),
        artifacts: artifacts
            .iter()
            .map(|a| ArtifactRecord {
                file: a.file.into(),
                bytes: a.bytes.len(),
                sha256: sha256_hex(&a.bytes),
            })
            .collect(),
        summary,
    };
    Ok((manifest, artifacts))
}

fn write_atomic(dir: &Path, file: &str, bytes: &[u8]) -> Result<()> {
    let tmp = dir.join(format!(".{file}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dir.join(file))?;
    Ok(())
}

/// Validates, computes every artifact in memory, then writes each one
/// through a temporary file and a rename, manifest last.
pub fn run_experiment(kind: ExperimentKind, config: &Config, out_dir: &Path) -> Result<Manifest> {
    let diags = validate(config);
    if has_errors(&diags) {
        let msg = diags
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Config(msg));
    }
    let (manifest, artifacts) = compute(kind, config)?;
    fs::create_dir_all(out_dir)?;
    for a in &artifacts {
        write_atomic(out_dir, a.file, &a.bytes)?;
    }
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(out_dir, MANIFEST_FILE, &json)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub original: Manifest,
    pub replayed: Manifest,
    /// Artifacts whose hash differs from the recorded one.
    pub mismatches: Vec<String>,
}

impl ReplayReport {
    pub fn reproduced(&self) -> bool {
        self.mismatches.is_empty() && self.original.artifacts.len() == self.replayed.artifacts.len()
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Re-runs the experiment recorded in a manifest and compares artifact hashes.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<ReplayReport> {
    let original = load_manifest(manifest_path)?;
    let replayed = run_experiment(original.experiment, &original.config, out_dir)?;
    let mismatches = original
        .artifacts
        .iter()
        .filter(|a| !replayed.artifacts.iter().any(|b| b.file == a.file && b.sha256 == a.sha256))
        .map(|a| a.file.clone())
        .collect();
    Ok(ReplayReport {
        original,
        replayed,
        mismatches,
    })
}
