//! Click generation, coincidence logic and counting statistics.
//!
//! Detector numbering follows the heralding setup: `D1` watches the
//! transmitted output `f`, `D2` the reflected output `e`, and `D3` the
//! trigger photon.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DetectorId {
    D1,
    D2,
    D3,
}

impl DetectorId {
    pub fn index(self) -> usize {
        match self {
            DetectorId::D1 => 0,
            DetectorId::D2 => 1,
            DetectorId::D3 => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_count_rate_hz: f64,
    pub dead_time_ns: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self::ideal()
    }
}

impl DetectorModel {
    pub fn new(efficiency: f64, dark_count_rate_hz: f64, dead_time_ns: f64) -> Result<Self> {
        let m = Self {
            efficiency,
            dark_count_rate_hz,
            dead_time_ns,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_count_rate_hz: 0.0,
            dead_time_ns: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid(format!("efficiency {} outside [0, 1]", self.efficiency)));
        }
        if !(self.dark_count_rate_hz >= 0.0 && self.dark_count_rate_hz.is_finite()) {
            return Err(invalid(format!("dark count rate {} must be >= 0", self.dark_count_rate_hz)));
        }
        if !(self.dead_time_ns >= 0.0 && self.dead_time_ns.is_finite()) {
            return Err(invalid(format!("dead time {} must be >= 0", self.dead_time_ns)));
        }
        Ok(())
    }

    /// Probability of a dark click inside one window (rate x window, capped at 1).
    pub fn dark_probability(&self, window_ns: f64) -> f64 {
        (self.dark_count_rate_hz * window_ns * 1e-9).min(1.0)
    }
}

/// Which detectors fired in one shot. Up to eight detectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClickSet(u8);

impl ClickSet {
    pub fn contains(self, detector: usize) -> bool {
        self.0 & (1 << detector) != 0
    }

    pub fn insert(&mut self, detector: usize) {
        self.0 |= 1 << detector;
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }
}

/// Samples one shot of clicks.
///
/// `output_probs[k]` is the probability that the photon reaches detector `k`;
/// the outcomes are mutually exclusive, so at most one photon click happens.
/// Each detector additionally draws an independent dark click for the window.
pub fn sample_clicks<R: Rng + ?Sized>(
    output_probs: &[f64],
    models: &[DetectorModel],
    window_ns: f64,
    rng: &mut R,
) -> Result<ClickSet> {
    if output_probs.len() != models.len() || models.len() > 8 {
        return Err(invalid("one probability and model per detector (max 8)"));
    }
    let mut total = 0.0;
    for &p in output_probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("probability {p} outside [0, 1]")));
        }
        total += p;
    }
    if total > 1.0 + 1e-9 {
        return Err(invalid(format!("exclusive probabilities sum to {total} > 1")));
    }
    for m in models {
        m.validate()?;
    }
    let mut clicks = draw_photon_click(output_probs, |k| models[k].efficiency, rng);
    for (k, m) in models.iter().enumerate() {
        let p = m.dark_probability(window_ns);
        if p > 0.0 && rng.random::<f64>() < p {
            clicks.insert(k);
        }
    }
    Ok(clicks)
}

/// Routes one photon to at most one detector, then applies that detector's
/// efficiency. Inputs are assumed valid.
pub(crate) fn draw_photon_click<R: Rng + ?Sized>(
    probs: &[f64],
    efficiency: impl Fn(usize) -> f64,
    rng: &mut R,
) -> ClickSet {
    let mut clicks = ClickSet::default();
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            let eta = efficiency(k);
            if eta >= 1.0 || rng.random::<f64>() < eta {
                clicks.insert(k);
            }
            break;
        }
    }
    clicks
}

/// Counts coincidences between two sorted timestamp streams (ns).
///
/// Two clicks coincide when they are at most `window_ns / 2` apart. Each
/// click is used at most once; matching proceeds earliest-first.
pub fn coincide(clicks_1: &[f64], clicks_3: &[f64], window_ns: f64) -> Result<usize> {
    if !(window_ns > 0.0) {
        return Err(invalid(format!("coincidence window must be > 0, got {window_ns}")));
    }
    for s in [clicks_1, clicks_3] {
        if s.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("click streams must be sorted"));
        }
    }
    let half = 0.5 * window_ns;
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < clicks_1.len() && j < clicks_3.len() {
        let (a, b) = (clicks_1[i], clicks_3[j]);
        if (a - b).abs() <= half {
            n += 1;
            i += 1;
            j += 1;
        } else if a < b {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(n)
}

/// Drops clicks that fall within `dead_time_ns` of the previous kept click.
pub fn apply_dead_time(clicks: &[f64], dead_time_ns: f64) -> Vec<f64> {
    let mut kept: Vec<f64> = Vec::with_capacity(clicks.len());
    for &t in clicks {
        match kept.last() {
            Some(&last) if t - last < dead_time_ns => {}
            _ => kept.push(t),
        }
    }
    kept
}

/// Homogeneous Poisson click stream on `[0, duration_ns)`.
pub fn poisson_stream<R: Rng + ?Sized>(rate_hz: f64, duration_ns: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    if rate_hz <= 0.0 {
        return out;
    }
    let rate_per_ns = rate_hz * 1e-9;
    let mut t = 0.0;
    loop {
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / rate_per_ns;
        if t >= duration_ns {
            return out;
        }
        out.push(t);
    }
}

/// Tallies for one scan setting.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CountRow {
    pub setting_id: usize,
    pub phi_rad: f64,
    pub singles_d1: u64,
    pub singles_d2: u64,
    pub singles_d3: u64,
    pub cc_13: u64,
    pub cc_23: u64,
    pub shots: u64,
}

impl CountRow {
    pub fn new(setting_id: usize, phi_rad: f64) -> Self {
        Self {
            setting_id,
            phi_rad,
            ..Self::default()
        }
    }

    /// Adds one shot's clicks, indexed by [`DetectorId::index`].
    pub fn record(&mut self, clicks: ClickSet) {
        self.shots += 1;
        let d1 = clicks.contains(0);
        let d2 = clicks.contains(1);
        let d3 = clicks.contains(2);
        self.singles_d1 += d1 as u64;
        self.singles_d2 += d2 as u64;
        self.singles_d3 += d3 as u64;
        self.cc_13 += (d1 && d3) as u64;
        self.cc_23 += (d2 && d3) as u64;
    }

    pub fn merge(&mut self, other: &CountRow) {
        self.singles_d1 += other.singles_d1;
        self.singles_d2 += other.singles_d2;
        self.singles_d3 += other.singles_d3;
        self.cc_13 += other.cc_13;
        self.cc_23 += other.cc_23;
        self.shots += other.shots;
    }

    pub fn total_coincidences(&self) -> u64 {
        self.cc_13 + self.cc_23
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.cc_13 > self.singles_d1.min(self.singles_d3)
            || self.cc_23 > self.singles_d2.min(self.singles_d3)
        {
            return Err(invalid(format!(
                "setting {}: coincidences exceed singles",
                self.setting_id
            )));
        }
        Ok(())
    }
}

/// Poisson standard deviation of a count.
pub fn poisson_sigma(n: u64) -> f64 {
    (n as f64).sqrt()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CountTable {
    pub rows: Vec<CountRow>,
}

impl CountTable {
    pub fn total_coincidences(&self) -> u64 {
        self.rows.iter().map(CountRow::total_coincidences).sum()
    }

    pub fn total_shots(&self) -> u64 {
        self.rows.iter().map(|r| r.shots).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrEstimate {
    pub t: f64,
    pub r: f64,
    /// Binomial standard deviation, shared by both estimates.
    pub sigma: f64,
}

/// `T = C13 / (C13 + C23)` with its binomial uncertainty.
pub fn estimate_t_r(row: &CountRow) -> Result<TrEstimate> {
    let n = row.total_coincidences();
    if n == 0 {
        return Err(invalid(format!("setting {}: no coincidences", row.setting_id)));
    }
    let t = row.cc_13 as f64 / n as f64;
    Ok(TrEstimate {
        t,
        r: 1.0 - t,
        sigma: (t * (1.0 - t) / n as f64).sqrt(),
    })
}
