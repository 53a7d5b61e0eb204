//! Builders for the individual optical elements, each returned as a
//! [`TransferMatrix`] over the full twelve-mode basis.
//!
//! Beam splitters use the symmetric convention: transmission is real and
//! reflection picks up a factor `i`. Other unitary conventions differ from
//! this one only by fixed phases on the ports.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::quantum::{Basis, ModeLabel, Path, Pol, TransferMatrix};

/// Reflection phase of a mirror. Unity: a common mirror phase on both arms
/// of the interferometer only contributes a global phase.
pub const MIRROR_REFLECTION_PHASE: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplittingRatio {
    t: f64,
}

impl SplittingRatio {
    pub fn new(transmissivity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&transmissivity) {
            return Err(invalid(format!(
                "transmissivity {transmissivity} outside [0, 1]"
            )));
        }
        Ok(Self { t: transmissivity })
    }

    pub fn balanced() -> Self {
        Self { t: 0.5 }
    }

    pub fn transmissivity(self) -> f64 {
        self.t
    }

    pub fn reflectivity(self) -> f64 {
        1.0 - self.t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// Drive state of one modulator crystal (axes at ±45°).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EomSetting {
    /// Birefringent phase in radians.
    pub phase: f64,
    pub polarity: Polarity,
}

impl EomSetting {
    pub fn new(phase: f64, polarity: Polarity) -> Self {
        Self { phase, polarity }
    }

    /// The two crystals of the splitter: same amplitude, opposite polarity.
    pub fn pair(phase: f64) -> (Self, Self) {
        (
            Self::new(phase, Polarity::Positive),
            Self::new(phase, Polarity::Negative),
        )
    }
}

/// Half-wave voltage of a crystal, assuming a linear electro-optic response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfWaveVoltage(f64);

impl HalfWaveVoltage {
    pub fn new(volts: f64) -> Result<Self> {
        if !(volts.is_finite() && volts > 0.0) {
            return Err(invalid(format!("half-wave voltage must be > 0, got {volts}")));
        }
        Ok(Self(volts))
    }

    pub fn volts(self) -> f64 {
        self.0
    }

    pub fn phase_for(self, volts: f64) -> f64 {
        PI * volts / self.0
    }

    pub fn voltage_for(self, phase: f64) -> f64 {
        phase * self.0 / PI
    }
}

/// A polarization-independent two-port splitter taking `inputs` to `outputs`.
///
/// For each polarization the input pair maps as
/// `in1 -> sqrt(T) out1 + i sqrt(R) out2`, `in2 -> i sqrt(R) out1 + sqrt(T) out2`.
/// Light arriving backwards on the output paths is sent to the input paths
/// through the adjoint block, which keeps the full matrix unitary.
pub fn beam_splitter(
    ratio: SplittingRatio,
    inputs: (Path, Path),
    outputs: (Path, Path),
) -> Result<TransferMatrix> {
    let paths = [inputs.0, inputs.1, outputs.0, outputs.1];
    for (i, p) in paths.iter().enumerate() {
        if paths[..i].contains(p) {
            return Err(invalid(format!(
                "beam splitter paths must be distinct, {} repeats",
                p.name()
            )));
        }
    }
    let t = Complex64::new(ratio.transmissivity().sqrt(), 0.0);
    let r = Complex64::new(0.0, ratio.reflectivity().sqrt());
    let block = [[t, r], [r, t]];

    let basis = Basis::full();
    let n = basis.len();
    let mut m = DMatrix::identity(n, n);
    let idx = |p: Path, q: Pol| basis.index_of(ModeLabel::new(p, q)).expect("full basis");
    for pol in Pol::ALL {
        let ins = [idx(inputs.0, pol), idx(inputs.1, pol)];
        let outs = [idx(outputs.0, pol), idx(outputs.1, pol)];
        for &k in ins.iter().chain(outs.iter()) {
            m[(k, k)] = Complex64::new(0.0, 0.0);
        }
        for (o, &row) in outs.iter().enumerate() {
            for (i, &col) in ins.iter().enumerate() {
                m[(row, col)] = block[o][i];
                m[(col, row)] = block[o][i].conj();
            }
        }
    }
    Ok(TransferMatrix::from_parts(basis, m))
}

/// One modulator crystal on `path`: `|+>` gains `exp(+i s φ/2)` and `|->`
/// gains `exp(-i s φ/2)`, with `s` the polarity sign.
pub fn eom(setting: EomSetting, on_path: Path) -> TransferMatrix {
    let half = 0.5 * setting.polarity.sign() * setting.phase;
    TransferMatrix::diagonal(Basis::full(), |l| {
        if l.path != on_path {
            return Complex64::new(1.0, 0.0);
        }
        match l.pol {
            Pol::Plus => Complex64::from_polar(1.0, half),
            Pol::Minus => Complex64::from_polar(1.0, -half),
        }
    })
}

pub fn mirror(on_path: Path) -> TransferMatrix {
    mirror_with_phase(on_path, MIRROR_REFLECTION_PHASE)
}

/// A mirror with an explicit reflection phase, for convention checks.
pub fn mirror_with_phase(on_path: Path, phase: f64) -> TransferMatrix {
    TransferMatrix::diagonal(Basis::full(), |l| {
        if l.path == on_path {
            Complex64::from_polar(1.0, phase)
        } else {
            Complex64::new(1.0, 0.0)
        }
    })
}

/// Scales amplitudes on `on_paths` by `sqrt(survival)`.
pub fn lossy_attenuator(survival: f64, on_paths: &[Path]) -> Result<TransferMatrix> {
    if !(0.0..=1.0).contains(&survival) {
        return Err(invalid(format!("survival {survival} outside [0, 1]")));
    }
    let amp = Complex64::new(survival.sqrt(), 0.0);
    Ok(TransferMatrix::diagonal(Basis::full(), |l| {
        if on_paths.contains(&l.path) {
            amp
        } else {
            Complex64::new(1.0, 0.0)
        }
    }))
}
