//! The tunable beam splitter: a balanced Mach-Zehnder interferometer with one
//! modulator per arm, driven with opposite polarities.
//!
//! Paths: input `a`/`b`, arms `c`/`d`, outputs `e`/`f`. With zero phase, light
//! entering on `a` leaves on `f`, so `T = cos²(φ/2)` is the probability of the
//! `a -> f` route and `R = sin²(φ/2)` that of `a -> e`. That zero-phase point
//! is also where the phase lock holds the interferometer.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::{draw_photon_click, estimate_t_r, CountRow, CountTable, DetectorModel};
use crate::error::{invalid, Error, Result};
use crate::exec::{self, rng_for, shot_chunks};
use crate::optics::{beam_splitter, eom, lossy_attenuator, mirror, EomSetting, SplittingRatio};
use crate::quantum::{compose_chain, Basis, ModeLabel, ModeState, Path, Pol, TransferMatrix};

pub fn transmissivity(phi: f64) -> f64 {
    (0.5 * phi).cos().powi(2)
}

pub fn reflectivity(phi: f64) -> f64 {
    (0.5 * phi).sin().powi(2)
}

/// Output amplitudes of the splitter for input on path `a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TbsOutput {
    pub e_plus: Complex64,
    pub e_minus: Complex64,
    pub f_plus: Complex64,
    pub f_minus: Complex64,
}

impl TbsOutput {
    pub fn prob_e(&self) -> f64 {
        self.e_plus.norm_sqr() + self.e_minus.norm_sqr()
    }

    pub fn prob_f(&self) -> f64 {
        self.f_plus.norm_sqr() + self.f_minus.norm_sqr()
    }

    pub fn to_state(&self) -> ModeState {
        let l = ModeLabel::new;
        ModeState::from_pairs(
            Basis::full(),
            &[
                (l(Path::E, Pol::Plus), self.e_plus),
                (l(Path::E, Pol::Minus), self.e_minus),
                (l(Path::F, Pol::Plus), self.f_plus),
                (l(Path::F, Pol::Minus), self.f_minus),
            ],
        )
        .expect("closed-form output is normalized")
    }

    pub fn from_state(s: &ModeState) -> Self {
        let amp = |p, q| s.amplitude(ModeLabel::new(p, q)).unwrap_or_default();
        Self {
            e_plus: amp(Path::E, Pol::Plus),
            e_minus: amp(Path::E, Pol::Minus),
            f_plus: amp(Path::F, Pol::Plus),
            f_minus: amp(Path::F, Pol::Minus),
        }
    }
}

/// Input polarization `alpha |+> + beta |->`, normalized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPolarization {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl InputPolarization {
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let n = alpha.norm_sqr() + beta.norm_sqr();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Unnormalized(n));
        }
        Ok(Self { alpha, beta })
    }

    pub fn horizontal() -> Self {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        Self { alpha: h, beta: h }
    }

    pub fn vertical() -> Self {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        Self { alpha: h, beta: -h }
    }

    pub fn diagonal() -> Self {
        Self {
            alpha: Complex64::new(1.0, 0.0),
            beta: Complex64::new(0.0, 0.0),
        }
    }

    pub fn antidiagonal() -> Self {
        Self {
            alpha: Complex64::new(0.0, 0.0),
            beta: Complex64::new(1.0, 0.0),
        }
    }

    pub fn right_circular() -> Self {
        Self {
            alpha: Complex64::new(FRAC_1_SQRT_2, 0.0),
            beta: Complex64::new(0.0, FRAC_1_SQRT_2),
        }
    }

    pub fn left_circular() -> Self {
        Self {
            alpha: Complex64::new(FRAC_1_SQRT_2, 0.0),
            beta: Complex64::new(0.0, -FRAC_1_SQRT_2),
        }
    }

    /// Parses `H`, `V`, `D`, `A`, `R` or `L`.
    pub fn named(name: &str) -> Option<Self> {
        Some(match name {
            "H" => Self::horizontal(),
            "V" => Self::vertical(),
            "D" => Self::diagonal(),
            "A" => Self::antidiagonal(),
            "R" => Self::right_circular(),
            "L" => Self::left_circular(),
            _ => return None,
        })
    }

    pub fn on_path(&self, path: Path) -> ModeState {
        ModeState::polarized(path, self.alpha, self.beta).expect("normalized polarization")
    }
}

/// The printed closed-form output for input `(alpha|+> + beta|->)|a>`:
///
/// ```text
/// e: sin(φ/2) exp(i(3π/2 - φ/2)) (alpha, -beta)
/// f: cos(φ/2) exp(i(π/2 + φ/2))  (alpha,  beta)
/// ```
pub fn tbs_closed_form(alpha: Complex64, beta: Complex64, phi: f64) -> Result<TbsOutput> {
    let n = alpha.norm_sqr() + beta.norm_sqr();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::Unnormalized(n));
    }
    let e = Complex64::from_polar((0.5 * phi).sin(), 1.5 * PI - 0.5 * phi);
    let f = Complex64::from_polar((0.5 * phi).cos(), 0.5 * PI + 0.5 * phi);
    Ok(TbsOutput {
        e_plus: e * alpha,
        e_minus: -e * beta,
        f_plus: f * alpha,
        f_minus: f * beta,
    })
}

fn first_splitter() -> TransferMatrix {
    beam_splitter(SplittingRatio::balanced(), (Path::A, Path::B), (Path::C, Path::D))
        .expect("distinct paths")
}

fn second_splitter() -> TransferMatrix {
    beam_splitter(SplittingRatio::balanced(), (Path::C, Path::D), (Path::E, Path::F))
        .expect("distinct paths")
}

/// `BS1 -> EOM(+φ) on c, EOM(-φ) on d -> mirrors -> BS2`, over paths `a,b -> e,f`.
pub fn tbs_composed(phi: f64) -> TransferMatrix {
    let (plus, minus) = EomSetting::pair(phi);
    compose_chain(&[
        first_splitter(),
        eom(plus, Path::C),
        eom(minus, Path::D),
        mirror(Path::C),
        mirror(Path::D),
        second_splitter(),
    ])
    .expect("shared basis")
}

/// The splitter followed by an insertion loss on both outputs.
pub fn tbs_composed_lossy(phi: f64, survival: f64) -> Result<TransferMatrix> {
    tbs_composed(phi).then(&lossy_attenuator(survival, &[Path::E, Path::F])?)
}

/// Fringe contrast of the first-order interference, lumping path-length
/// mismatch, residual birefringence and wavefront mismatch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterferenceQuality {
    mode_overlap: f64,
}

impl InterferenceQuality {
    pub fn new(mode_overlap: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mode_overlap) {
            return Err(invalid(format!("mode overlap {mode_overlap} outside [0, 1]")));
        }
        Ok(Self { mode_overlap })
    }

    pub fn ideal() -> Self {
        Self { mode_overlap: 1.0 }
    }

    pub fn contrast(self) -> f64 {
        self.mode_overlap
    }
}

/// Reflectivity of a splitter with fringe contrast `v`: `0.5 (1 - v cos φ)`.
pub fn expected_reflectivity(phi: f64, contrast: f64) -> f64 {
    0.5 * (1.0 - contrast * phi.cos())
}

/// Computes per-shot output probabilities at the amplitude level.
///
/// The splitters and the loss are fixed, so the router keeps the state
/// after the first splitter, each mode's modulator phase in units of `φ/2`
/// (read off the pair's transfer matrix) and the output rows of the second
/// splitter.
struct Router {
    after_bs1: Vec<Complex64>,
    half_phase_sign: Vec<f64>,
    rows_f: Vec<Vec<Complex64>>,
    rows_e: Vec<Vec<Complex64>>,
    contrast: f64,
}

impl Router {
    fn new(input: &InputPolarization, contrast: f64, survival: f64) -> Result<Self> {
        let after_bs1 = first_splitter().apply(&input.on_path(Path::A))?;
        let loss = lossy_attenuator(survival, &[Path::E, Path::F])?;
        let bs2 = second_splitter().then(&loss)?;
        let (plus, minus) = EomSetting::pair(1.0);
        let pair = eom(plus, Path::C).then(&eom(minus, Path::D))?;
        let n = pair.basis().len();
        let half_phase_sign = (0..n).map(|k| 2.0 * pair.entries()[(k, k)].arg()).collect();
        let rows = |path: Path| -> Vec<Vec<Complex64>> {
            Pol::ALL
                .iter()
                .map(|&q| {
                    let r = bs2.basis().index_of(ModeLabel::new(path, q)).expect("full basis");
                    bs2.entries().row(r).iter().copied().collect()
                })
                .collect()
        };
        Ok(Self {
            after_bs1: after_bs1.amplitudes().to_vec(),
            half_phase_sign,
            rows_f: rows(Path::F),
            rows_e: rows(Path::E),
            contrast,
        })
    }

    /// `(p_f, p_e)`: probabilities that the photon exits (and survives) on
    /// `f` and on `e`, with the incoherent share set by the contrast.
    fn probabilities(&self, phi: f64) -> (f64, f64) {
        let u = Complex64::from_polar(1.0, 0.5 * phi);
        let arms: Vec<Complex64> = self
            .after_bs1
            .iter()
            .zip(&self.half_phase_sign)
            .map(|(&a, &s)| {
                if s > 0.5 {
                    a * u
                } else if s < -0.5 {
                    a * u.conj()
                } else {
                    a
                }
            })
            .collect();
        let port = |rows: &[Vec<Complex64>]| -> f64 {
            rows.iter()
                .map(|row| row.iter().zip(&arms).map(|(m, a)| m * a).sum::<Complex64>().norm_sqr())
                .sum()
        };
        let (pf, pe) = (port(&self.rows_f), port(&self.rows_e));
        let flat = 0.5 * (1.0 - self.contrast) * (pf + pe);
        (
            (self.contrast * pf + flat).clamp(0.0, 1.0),
            (self.contrast * pe + flat).clamp(0.0, 1.0),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    #[serde(rename = "phi_rad")]
    pub phi: f64,
    #[serde(rename = "T_est")]
    pub t_est: f64,
    #[serde(rename = "R_est")]
    pub r_est: f64,
    /// One standard deviation on `t_est` and `r_est`.
    pub sigma: f64,
}

/// Heralded fringe-scan setup: photon 2 enters on `a`, photon 1 goes to `D3`.
#[derive(Clone, Debug, PartialEq)]
pub struct FringeScan {
    pub phis: Vec<f64>,
    pub input: InputPolarization,
    pub quality: InterferenceQuality,
    pub shots_per_point: u64,
    /// RMS of a per-shot Gaussian phase error (e.g. residual lock noise).
    pub phase_jitter_rms: f64,
    /// Probability that photon 2 survives the splitter (1 - insertion loss).
    pub survival: f64,
    /// Models for D1 (output f), D2 (output e) and D3 (trigger).
    pub detectors: [DetectorModel; 3],
    pub coincidence_window_ns: f64,
    pub seed: u64,
}

impl FringeScan {
    pub fn new(phis: Vec<f64>, shots_per_point: u64, seed: u64) -> Self {
        Self {
            phis,
            input: InputPolarization::horizontal(),
            quality: InterferenceQuality::ideal(),
            shots_per_point,
            phase_jitter_rms: 0.0,
            survival: 1.0,
            detectors: [DetectorModel::ideal(); 3],
            coincidence_window_ns: 3.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.phis.is_empty() {
            return Err(invalid("empty phase list"));
        }
        if self.shots_per_point == 0 {
            return Err(invalid("shots_per_point must be >= 1"));
        }
        if !(self.phase_jitter_rms >= 0.0 && self.phase_jitter_rms.is_finite()) {
            return Err(invalid("phase jitter must be >= 0"));
        }
        if !(self.coincidence_window_ns > 0.0) {
            return Err(invalid("coincidence window must be > 0"));
        }
        for d in &self.detectors {
            d.validate()?;
        }
        Ok(())
    }
}

/// Equally spaced phases over `[0, 2π)`.
pub fn full_turn(points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| 2.0 * PI * k as f64 / points as f64)
        .collect()
}

/// Runs the Monte Carlo and returns the raw tallies, one row per phase.
pub fn fringe_counts(scan: &FringeScan) -> Result<CountTable> {
    scan.validate()?;
    let router = Router::new(&scan.input, scan.quality.contrast(), scan.survival)?;
    let nominal = scan
        .phis
        .iter()
        .map(|&phi| router.probabilities(phi))
        .collect::<Vec<_>>();
    let jitter = if scan.phase_jitter_rms > 0.0 {
        Some(Normal::new(0.0, scan.phase_jitter_rms).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let eff = scan.detectors.map(|d| d.efficiency);
    let dark = scan.detectors.map(|d| d.dark_probability(scan.coincidence_window_ns));

    let items: Vec<(usize, u64, u64)> = (0..scan.phis.len())
        .flat_map(|p| shot_chunks(scan.shots_per_point).map(move |(c, n)| (p, c, n)))
        .collect();

    let partial = exec::map_indexed(items.len(), |i| -> Result<CountRow> {
        let (point, chunk, shots) = items[i];
        let phi = scan.phis[point];
        let mut rng = rng_for(scan.seed, &[point as u64, chunk]);
        let mut row = CountRow::new(point, phi);
        for _ in 0..shots {
            let (pf, pe) = match &jitter {
                Some(n) => router.probabilities(phi + n.sample(&mut rng)),
                None => nominal[point],
            };
            let mut clicks = draw_photon_click(&[pf, pe], |k| eff[k], &mut rng);
            if eff[2] >= 1.0 || rng.random::<f64>() < eff[2] {
                clicks.insert(2);
            }
            for (k, &p) in dark.iter().enumerate() {
                if p > 0.0 && rng.random::<f64>() < p {
                    clicks.insert(k);
                }
            }
            row.record(clicks);
        }
        Ok(row)
    });

    let mut rows: Vec<CountRow> = scan
        .phis
        .iter()
        .enumerate()
        .map(|(k, &phi)| CountRow::new(k, phi))
        .collect();
    for (item, r) in items.iter().zip(partial) {
        rows[item.0].merge(&r?);
    }
    Ok(CountTable { rows })
}

pub fn points_from_counts(table: &CountTable) -> Result<Vec<FringePoint>> {
    table
        .rows
        .iter()
        .map(|row| {
            let e = estimate_t_r(row)?;
            Ok(FringePoint {
                phi: row.phi_rad,
                t_est: e.t,
                r_est: e.r,
                sigma: e.sigma,
            })
        })
        .collect()
}

/// Monte Carlo estimate of `T` and `R` at each scan phase.
pub fn fringe_scan(scan: &FringeScan) -> Result<Vec<FringePoint>> {
    points_from_counts(&fringe_counts(scan)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VisibilityFit {
    pub visibility: f64,
    pub visibility_sigma: f64,
    /// `φ0` of the fitted `cos(φ - φ0)` term.
    pub phase_offset: f64,
    pub mean: f64,
    pub amplitude: f64,
}

/// Least-squares fit of `R(φ) = c0 + c1 cos(φ - φ0)`; `V = c1 / c0`.
///
/// Weighted by inverse variance when every point carries a positive sigma,
/// unweighted otherwise (with the residual variance as noise estimate).
pub fn fit_visibility(points: &[FringePoint]) -> Result<VisibilityFit> {
    if points.len() < 4 {
        return Err(Error::FitFailure(format!("{} points, need at least 4", points.len())));
    }
    let lo = points.iter().map(|p| p.phi).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.phi).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= PI {
        return Err(Error::FitFailure(format!("phases span {} rad, need > pi", hi - lo)));
    }
    let weighted = points.iter().all(|p| p.sigma > 0.0);

    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for p in points {
        let x = Vector3::new(1.0, p.phi.cos(), p.phi.sin());
        let w = if weighted { 1.0 / (p.sigma * p.sigma) } else { 1.0 };
        normal += w * x * x.transpose();
        rhs += w * p.r_est * x;
    }
    let inv = normal
        .try_inverse()
        .ok_or_else(|| Error::FitFailure("singular normal matrix".into()))?;
    let beta = inv * rhs;
    let (c0, a, b) = (beta[0], beta[1], beta[2]);
    let c1 = a.hypot(b);
    if !(c0 > 0.0) || c1 <= 1e-12 * c0.abs() {
        return Err(Error::FitFailure(format!(
            "degenerate fringe (mean {c0}, amplitude {c1})"
        )));
    }

    let cov = if weighted {
        inv
    } else {
        let rss: f64 = points
            .iter()
            .map(|p| {
                let m = c0 + a * p.phi.cos() + b * p.phi.sin();
                (p.r_est - m).powi(2)
            })
            .sum();
        inv * (rss / (points.len() - 3) as f64)
    };
    let grad = Vector3::new(-c1 / (c0 * c0), a / (c1 * c0), b / (c1 * c0));
    let var = (grad.transpose() * cov * grad)[0].max(0.0);

    Ok(VisibilityFit {
        visibility: c1 / c0,
        visibility_sigma: var.sqrt(),
        phase_offset: b.atan2(a),
        mean: c0,
        amplitude: c1,
    })
}

pub fn write_fringe_csv<W: Write>(points: &[FringePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

/// Share of the total coincidence rate kept relative to a reference table.
pub fn rate_ratio(table: &CountTable, reference: &CountTable) -> Result<f64> {
    let r = reference.total_coincidences();
    if r == 0 {
        return Err(invalid("reference table has no coincidences"));
    }
    Ok(table.total_coincidences() as f64 / r as f64)
}
