//! Hong-Ou-Mandel interference with one photon in each splitter input.
//!
//! Two-photon states are kept out of the single-photon machinery: the module
//! tracks the three output configurations of two photons over the ports `e`
//! and `f` directly. Temporal distinguishability enters through the amplitude
//! overlap `γ` of the two wavepackets; a fraction `γ²` of the pair behaves as
//! indistinguishable bosons, the rest as two classical particles.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{self, rng_for, shot_chunks};
use crate::quantum::{ModeLabel, Path, Pol};
use crate::tbs::{reflectivity, tbs_composed, transmissivity};

/// Speed of light in nm/ns.
const C_NM_PER_NS: f64 = 299_792_458.0;
/// Speed of light in µm/ns.
const C_UM_PER_NS: f64 = 299_792.458;
/// FWHM = this x standard deviation, for a Gaussian.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// A filtered single-photon wavepacket with a Gaussian spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wavepacket {
    pub center_wavelength_nm: f64,
    pub bandwidth_fwhm_nm: f64,
    pub arrival_offset_ns: f64,
}

impl Wavepacket {
    pub fn new(center_wavelength_nm: f64, bandwidth_fwhm_nm: f64, arrival_offset_ns: f64) -> Result<Self> {
        let w = Self {
            center_wavelength_nm,
            bandwidth_fwhm_nm,
            arrival_offset_ns,
        };
        w.validate()?;
        Ok(w)
    }

    /// 808 nm photon behind a 3 nm interference filter.
    pub fn filtered_808() -> Self {
        Self {
            center_wavelength_nm: 808.0,
            bandwidth_fwhm_nm: 3.0,
            arrival_offset_ns: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.bandwidth_fwhm_nm > 0.0 && self.bandwidth_fwhm_nm.is_finite()) {
            return Err(invalid(format!("bandwidth must be > 0, got {}", self.bandwidth_fwhm_nm)));
        }
        if !(self.center_wavelength_nm > 0.0 && self.center_wavelength_nm.is_finite()) {
            return Err(invalid(format!(
                "wavelength must be > 0, got {}",
                self.center_wavelength_nm
            )));
        }
        Ok(())
    }

    pub fn center_frequency(&self) -> f64 {
        C_NM_PER_NS / self.center_wavelength_nm
    }

    /// RMS width of the power spectrum, in 1/ns.
    pub fn spectral_sigma(&self) -> f64 {
        C_NM_PER_NS * self.bandwidth_fwhm_nm
            / (self.center_wavelength_nm * self.center_wavelength_nm)
            / FWHM_PER_SIGMA
    }

    /// `σ_τ` of the overlap `exp(-τ²/(2σ_τ²))` between two copies, in ns.
    pub fn coherence_time_ns(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.spectral_sigma())
    }
}

/// Free-space path difference equivalent to a delay.
pub fn delay_to_path_um(delay_ns: f64) -> f64 {
    delay_ns * C_UM_PER_NS
}

/// Magnitude of the amplitude overlap `|γ|` of two Gaussian wavepackets at a
/// relative delay (plus their arrival offsets).
pub fn overlap(w1: &Wavepacket, w2: &Wavepacket, delay_ns: f64) -> Result<f64> {
    w1.validate()?;
    w2.validate()?;
    let tau = delay_ns + w2.arrival_offset_ns - w1.arrival_offset_ns;
    let (s1, s2) = (w1.spectral_sigma(), w2.spectral_sigma());
    let sum = s1 * s1 + s2 * s2;
    let dnu = w1.center_frequency() - w2.center_frequency();
    let pi = std::f64::consts::PI;
    let g = (2.0 * s1 * s2 / sum).sqrt()
        * (-dnu * dnu / (4.0 * sum)).exp()
        * (-4.0 * pi * pi * tau * tau * s1 * s1 * s2 * s2 / sum).exp();
    Ok(g.clamp(0.0, 1.0))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid(format!("overlap {gamma} outside [0, 1]")));
    }
    Ok(())
}

/// Probability that the two photons leave on different ports:
/// `T² + R² - 2 T R γ²`.
pub fn hom_coincidence_prob(phi: f64, gamma: f64) -> Result<f64> {
    if !phi.is_finite() {
        return Err(invalid("phase must be finite"));
    }
    check_gamma(gamma)?;
    let (t, r) = (transmissivity(phi), reflectivity(phi));
    Ok((t * t + r * r - 2.0 * t * r * gamma * gamma).clamp(0.0, 1.0))
}

/// Fractional dip depth `(P(γ=0) - P(γ)) / P(γ=0) = 2TRγ² / (T² + R²)`.
///
/// Undefined when the splitter routes deterministically (`T R = 0`): both
/// photons then keep their spatial modes and there is no dip to speak of.
pub fn hom_dip_visibility(phi: f64, gamma: f64) -> Result<f64> {
    let (t, r) = (transmissivity(phi), reflectivity(phi));
    if t * r < 1e-15 {
        return Err(Error::UndefinedVisibility(format!(
            "splitter at phase {phi} has T R = {}",
            t * r
        )));
    }
    let far = hom_coincidence_prob(phi, 0.0)?;
    let near = hom_coincidence_prob(phi, gamma)?;
    Ok((far - near) / far)
}

/// Output statistics of one photon in `a` and one in `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairOutcome {
    pub both_e: f64,
    pub split: f64,
    pub both_f: f64,
}

/// Bosonic bookkeeping on the splitter's `a,b -> e,f` block: the
/// indistinguishable share interferes through permanents, the rest adds
/// probabilities.
pub fn pair_outcome(phi: f64, gamma: f64) -> Result<PairOutcome> {
    check_gamma(gamma)?;
    let m = tbs_composed(phi);
    let u = |out: Path, inp: Path| {
        m.entry(ModeLabel::new(out, Pol::Plus), ModeLabel::new(inp, Pol::Plus))
            .expect("full basis")
    };
    let (ea, eb, fa, fb) = (u(Path::E, Path::A), u(Path::E, Path::B), u(Path::F, Path::A), u(Path::F, Path::B));
    let sqrt2 = std::f64::consts::SQRT_2;

    let quantum = [
        (Complex64::new(sqrt2, 0.0) * ea * eb).norm_sqr(),
        (ea * fb + fa * eb).norm_sqr(),
        (Complex64::new(sqrt2, 0.0) * fa * fb).norm_sqr(),
    ];
    let (pea, peb, pfa, pfb) = (ea.norm_sqr(), eb.norm_sqr(), fa.norm_sqr(), fb.norm_sqr());
    let classical = [pea * peb, pea * pfb + pfa * peb, pfa * pfb];

    let w = gamma * gamma;
    let mix = |k: usize| w * quantum[k] + (1.0 - w) * classical[k];
    Ok(PairOutcome {
        both_e: mix(0),
        split: mix(1),
        both_f: mix(2),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HomPoint {
    pub delay_ns: f64,
    pub path_difference_um: f64,
    pub expected_prob: f64,
    pub coincidences: u64,
    pub shots: u64,
    /// Poisson standard deviation of `coincidences`.
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomScan {
    pub delays_ns: Vec<f64>,
    pub phi: f64,
    pub packets: (Wavepacket, Wavepacket),
    /// Overlap at optimal delay; residual distinguishability beyond timing.
    pub peak_overlap: f64,
    pub shots_per_point: u64,
    pub seed: u64,
}

/// Monte Carlo coincidence tallies along a delay scan.
pub fn hom_delay_scan(scan: &HomScan) -> Result<Vec<HomPoint>> {
    if scan.delays_ns.is_empty() {
        return Err(invalid("empty delay list"));
    }
    if scan.shots_per_point == 0 {
        return Err(invalid("shots_per_point must be >= 1"));
    }
    check_gamma(scan.peak_overlap)?;
    let probs = scan
        .delays_ns
        .iter()
        .map(|&d| {
            let g = scan.peak_overlap * overlap(&scan.packets.0, &scan.packets.1, d)?;
            hom_coincidence_prob(scan.phi, g)
        })
        .collect::<Result<Vec<_>>>()?;

    let items: Vec<(usize, u64, u64)> = (0..probs.len())
        .flat_map(|p| shot_chunks(scan.shots_per_point).map(move |(c, n)| (p, c, n)))
        .collect();
    let partial = exec::map_indexed(items.len(), |i| {
        let (point, chunk, shots) = items[i];
        let p = probs[point];
        let mut rng = rng_for(scan.seed, &[point as u64, chunk]);
        (0..shots).filter(|_| rng.random::<f64>() < p).count() as u64
    });
    let mut counts = vec![0u64; probs.len()];
    for (item, n) in items.iter().zip(partial) {
        counts[item.0] += n;
    }

    Ok(scan
        .delays_ns
        .iter()
        .zip(probs)
        .zip(counts)
        .map(|((&delay_ns, expected_prob), coincidences)| HomPoint {
            delay_ns,
            path_difference_um: delay_to_path_um(delay_ns),
            expected_prob,
            coincidences,
            shots: scan.shots_per_point,
            sigma: (coincidences as f64).sqrt(),
        })
        .collect())
}

/// Evenly spaced delays from `min` to `max` inclusive.
pub fn delay_grid(min_ns: f64, max_ns: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.5 * (min_ns + max_ns)],
        _ => (0..points)
            .map(|k| min_ns + (max_ns - min_ns) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DipClassification {
    #[serde(rename = "dip detected")]
    DipDetected,
    #[serde(rename = "no dip detected")]
    NoDipDetected,
}

impl DipClassification {
    pub fn label(self) -> &'static str {
        match self {
            DipClassification::DipDetected => "dip detected",
            DipClassification::NoDipDetected => "no dip detected",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DipSummary {
    pub visibility: f64,
    pub visibility_sigma: f64,
    /// Mean coincidences over the outer quarter of delays on each side.
    pub baseline: f64,
    pub minimum: f64,
    pub classification: DipClassification,
}

/// Dip depth relative to the far-delay baseline.
///
/// The baseline averages the points in the outer quarter of the scan on each
/// side; a dip counts as detected when the minimum sits more than three
/// combined Poisson deviations below it.
pub fn analyze_dip(points: &[HomPoint]) -> Result<DipSummary> {
    if points.len() < 3 {
        return Err(invalid("need at least 3 scan points"));
    }
    let mut sorted: Vec<&HomPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.delay_ns.total_cmp(&b.delay_ns));
    let edge = (sorted.len() / 4).max(1);
    let outer: Vec<f64> = sorted[..edge]
        .iter()
        .chain(sorted[sorted.len() - edge..].iter())
        .map(|p| p.coincidences as f64)
        .collect();
    let baseline = outer.iter().sum::<f64>() / outer.len() as f64;
    if baseline <= 0.0 {
        return Err(Error::UndefinedVisibility("zero baseline coincidences".into()));
    }
    let minimum = sorted
        .iter()
        .map(|p| p.coincidences as f64)
        .fold(f64::INFINITY, f64::min);
    let var_base = baseline / outer.len() as f64;
    let var_min = minimum;
    let visibility = (baseline - minimum) / baseline;
    // d V / d baseline = minimum / baseline², d V / d minimum = -1 / baseline
    let visibility_sigma = ((minimum / (baseline * baseline)).powi(2) * var_base
        + var_min / (baseline * baseline))
        .sqrt();
    let detected = baseline - minimum > 3.0 * (var_base + var_min).sqrt();
    Ok(DipSummary {
        visibility,
        visibility_sigma,
        baseline,
        minimum,
        classification: if detected {
            DipClassification::DipDetected
        } else {
            DipClassification::NoDipDetected
        },
    })
}

#[derive(Serialize)]
struct HomCsvRow {
    delay_ns: f64,
    coincidences: u64,
    expected_prob: f64,
    sigma: f64,
}

pub fn write_hom_csv<W: Write>(points: &[HomPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(HomCsvRow {
            delay_ns: p.delay_ns,
            coincidences: p.coincidences,
            expected_prob: p.expected_prob,
            sigma: p.sigma,
        })?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

    #[test]
    fn overlap_examples() {
        let w = Wavepacket::filtered_808();
        assert!((overlap(&w, &w, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(overlap(&w, &w, 1.0).unwrap() < 1e-300);
        let s = w.coherence_time_ns();
        assert!((overlap(&w, &w, s).unwrap() - (-0.5f64).exp()).abs() < 1e-12);
        assert!((overlap(&w, &w, s).unwrap() - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn coherence_time_of_3nm_filter() {
        // Δν = c Δλ / λ² = 1377.6 /ns; σ_ν = Δν / 2.3548; σ_τ = 1 / (2π σ_ν)
        let s = Wavepacket::filtered_808().coherence_time_ns();
        assert!((s * 1e3 - 0.2720).abs() < 1e-3, "{s} ns");
    }

    /// Overlap oracle: numerically integrate the product of the two amplitude
    /// spectra with the delay phase.
    #[test]
    fn overlap_matches_quadrature() {
        let w1 = Wavepacket::new(808.0, 3.0, 0.0).unwrap();
        let w2 = Wavepacket::new(808.5, 2.0, 0.0001).unwrap();
        let amp = |w: &Wavepacket, nu: f64| {
            let s = w.spectral_sigma();
            (2.0 * PI * s * s).powf(-0.25) * (-(nu - w.center_frequency()).powi(2) / (4.0 * s * s)).exp()
        };
        for delay in [0.0, 1e-4, 3e-4] {
            let tau = delay + w2.arrival_offset_ns - w1.arrival_offset_ns;
            let (lo, hi, n) = (w1.center_frequency() - 6000.0, w1.center_frequency() + 6000.0, 200_000);
            let h = (hi - lo) / n as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..=n {
                let nu = lo + h * k as f64;
                let wgt = if k == 0 || k == n { 0.5 } else { 1.0 };
                acc += Complex64::from_polar(wgt * amp(&w1, nu) * amp(&w2, nu), 2.0 * PI * nu * tau);
            }
            let numeric = acc.norm() * h;
            let closed = overlap(&w1, &w2, delay).unwrap();
            assert!((numeric - closed).abs() < 1e-9, "{numeric} vs {closed}");
        }
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        assert!(Wavepacket::new(808.0, 0.0, 0.0).is_err());
        let mut w = Wavepacket::filtered_808();
        w.bandwidth_fwhm_nm = -1.0;
        assert!(overlap(&w, &Wavepacket::filtered_808(), 0.0).is_err());
    }

    #[test]
    fn coincidence_examples() {
        assert!(hom_coincidence_prob(FRAC_PI_2, 1.0).unwrap() < 1e-15);
        for g in [0.0, 0.4, 1.0] {
            assert!((hom_coincidence_prob(0.0, g).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((hom_coincidence_prob(FRAC_PI_2, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(hom_coincidence_prob(0.3, 1.2).is_err());
    }

    #[test]
    fn visibility_examples() {
        assert!((hom_dip_visibility(FRAC_PI_2, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let g = 0.887f64.sqrt();
        assert!((g - 0.9418).abs() < 1e-4);
        assert!((hom_dip_visibility(FRAC_PI_2, g).unwrap() - 0.887).abs() < 1e-12);
        assert!((hom_dip_visibility(FRAC_PI_3, 1.0).unwrap() - 0.6).abs() < 1e-12);
        assert!(matches!(hom_dip_visibility(0.0, 1.0), Err(Error::UndefinedVisibility(_))));
        assert!(hom_dip_visibility(PI, 1.0).is_err());
    }

    #[test]
    fn coincidence_properties_on_grid() {
        for i in 0..=60 {
            let phi = PI * i as f64 / 60.0;
            let mut prev = f64::INFINITY;
            for j in 0..=50 {
                let g = j as f64 / 50.0;
                let p = hom_coincidence_prob(phi, g).unwrap();
                assert!((0.0..=1.0).contains(&p));
                let mirrored = hom_coincidence_prob(PI - phi, g).unwrap();
                assert!((p - mirrored).abs() < 1e-12);
                if i > 0 && i < 60 && j > 0 {
                    assert!(p < prev, "not decreasing at phi={phi}, g={g}");
                }
                prev = p;
            }
        }
    }

    #[test]
    fn bosonic_bookkeeping_agrees_with_closed_form() {
        for phi in [0.0, 0.4, FRAC_PI_2, 2.0, PI] {
            for g in [0.0, 0.5, 1.0] {
                let o = pair_outcome(phi, g).unwrap();
                assert!((o.both_e + o.split + o.both_f - 1.0).abs() < 1e-12);
                assert!((o.split - hom_coincidence_prob(phi, g).unwrap()).abs() < 1e-12);
            }
        }
        // perfect bunching at the balanced point
        let o = pair_outcome(FRAC_PI_2, 1.0).unwrap();
        assert!((o.both_e - 0.5).abs() < 1e-12 && (o.both_f - 0.5).abs() < 1e-12);
    }

    fn scan(phi: f64, delays: Vec<f64>, shots: u64) -> HomScan {
        HomScan {
            delays_ns: delays,
            phi,
            packets: (Wavepacket::filtered_808(), Wavepacket::filtered_808()),
            peak_overlap: 1.0,
            shots_per_point: shots,
            seed: 5,
        }
    }

    #[test]
    fn perfect_overlap_gives_no_coincidences() {
        let pts = hom_delay_scan(&scan(FRAC_PI_2, vec![0.0], 10_000)).unwrap();
        assert_eq!(pts[0].coincidences, 0);
        assert_eq!(pts[0].expected_prob, 0.0);
    }

    #[test]
    fn zero_phase_scan_is_flat() {
        let pts = hom_delay_scan(&scan(0.0, delay_grid(-1e-3, 1e-3, 11), 5000)).unwrap();
        assert!(pts.iter().all(|p| p.coincidences == 5000));
        let s = analyze_dip(&pts).unwrap();
        assert_eq!(s.classification, DipClassification::NoDipDetected);
    }

    #[test]
    fn balanced_scan_follows_gaussian_dip() {
        let mut sc = scan(FRAC_PI_2, delay_grid(-1.2e-3, 1.2e-3, 21), 50_000);
        sc.peak_overlap = 0.9;
        let pts = hom_delay_scan(&sc).unwrap();
        for p in &pts {
            let mean = p.expected_prob * p.shots as f64;
            let sd = (p.shots as f64 * p.expected_prob * (1.0 - p.expected_prob)).sqrt().max(1.0);
            assert!((p.coincidences as f64 - mean).abs() < 5.0 * sd);
        }
        let s = analyze_dip(&pts).unwrap();
        assert_eq!(s.classification, DipClassification::DipDetected);
        assert!((s.visibility - 0.81).abs() < 0.02, "{}", s.visibility);
    }

    #[test]
    fn scan_input_errors() {
        assert!(hom_delay_scan(&scan(FRAC_PI_2, vec![], 10)).is_err());
        assert!(hom_delay_scan(&scan(FRAC_PI_2, vec![0.0], 0)).is_err());
    }

    #[test]
    fn csv_columns() {
        let pts = hom_delay_scan(&scan(FRAC_PI_2, vec![0.0], 10)).unwrap();
        let mut buf = Vec::new();
        write_hom_csv(&pts, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("delay_ns,coincidences,expected_prob,sigma\n"));
    }

    #[test]
    fn delay_grid_endpoints() {
        let g = delay_grid(-1.0, 1.0, 21);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[20], 1.0);
        assert_eq!(g[10], 0.0);
    }
}
