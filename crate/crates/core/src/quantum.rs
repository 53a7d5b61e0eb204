//! Single-photon states over labeled optical modes, and the dense linear
//! algebra every optical element reduces to.
//!
//! The canonical basis is the product of six spatial paths `a..f` with the
//! two eigenpolarizations of the modulator crystals (`+45°`, `-45°`), ordered
//! path-major: `a+, a-, b+, b-, ..., f+, f-`. States that only live on a few
//! paths are zero-padded into this basis.

use std::fmt;
use std::ops::{Add, Mul};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

/// Slack allowed above unit norm / unit singular value.
pub const NORM_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Path {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl Path {
    pub const ALL: [Path; 6] = [Path::A, Path::B, Path::C, Path::D, Path::E, Path::F];

    pub fn name(self) -> char {
        match self {
            Path::A => 'a',
            Path::B => 'b',
            Path::C => 'c',
            Path::D => 'd',
            Path::E => 'e',
            Path::F => 'f',
        }
    }
}

/// Polarization along the modulator axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pol {
    /// Eigenstate along +45°.
    Plus,
    /// Eigenstate along -45°.
    Minus,
}

impl Pol {
    pub const ALL: [Pol; 2] = [Pol::Plus, Pol::Minus];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeLabel {
    pub path: Path,
    pub pol: Pol,
}

impl ModeLabel {
    pub const fn new(path: Path, pol: Pol) -> Self {
        Self { path, pol }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.pol {
            Pol::Plus => '+',
            Pol::Minus => '-',
        };
        write!(f, "{}{}", self.path.name(), p)
    }
}

/// An ordered set of unique mode labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Basis(Arc<[ModeLabel]>);

impl Basis {
    pub fn new(labels: Vec<ModeLabel>) -> Result<Self> {
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(invalid(format!("duplicate mode {l} in basis")));
            }
        }
        Ok(Self(labels.into()))
    }

    /// All twelve modes in canonical order.
    pub fn full() -> Self {
        Self::on_paths(&Path::ALL)
    }

    /// Both polarizations of the given paths, in canonical order.
    pub fn on_paths(paths: &[Path]) -> Self {
        let mut paths = paths.to_vec();
        paths.sort();
        paths.dedup();
        let labels = paths
            .into_iter()
            .flat_map(|p| Pol::ALL.into_iter().map(move |q| ModeLabel::new(p, q)))
            .collect::<Vec<_>>();
        Self(labels.into())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[ModeLabel] {
        &self.0
    }

    pub fn index_of(&self, label: ModeLabel) -> Option<usize> {
        self.0.iter().position(|&l| l == label)
    }
}

/// Complex amplitudes of one photon over a basis of modes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeState {
    basis: Basis,
    amps: DVector<Complex64>,
}

impl ModeState {
    pub fn new(basis: Basis, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != basis.len() {
            return Err(Error::BasisMismatch(format!(
                "{} amplitudes for a basis of {} modes",
                amps.len(),
                basis.len()
            )));
        }
        let state = Self {
            basis,
            amps: DVector::from_vec(amps),
        };
        let n = state.norm_sqr();
        if !n.is_finite() || n > 1.0 + NORM_SLACK {
            return Err(invalid(format!("state norm^2 {n} exceeds 1")));
        }
        Ok(state)
    }

    pub fn zero(basis: Basis) -> Self {
        let n = basis.len();
        Self {
            basis,
            amps: DVector::zeros(n),
        }
    }

    /// A state built from `(mode, amplitude)` pairs; unlisted modes are zero.
    pub fn from_pairs(basis: Basis, pairs: &[(ModeLabel, Complex64)]) -> Result<Self> {
        let mut amps = vec![Complex64::new(0.0, 0.0); basis.len()];
        for &(label, a) in pairs {
            let i = basis
                .index_of(label)
                .ok_or_else(|| Error::BasisMismatch(format!("mode {label} not in basis")))?;
            amps[i] += a;
        }
        Self::new(basis, amps)
    }

    /// `(alpha |+> + beta |->)` on `path`, in the full basis.
    pub fn polarized(path: Path, alpha: Complex64, beta: Complex64) -> Result<Self> {
        Self::from_pairs(
            Basis::full(),
            &[
                (ModeLabel::new(path, Pol::Plus), alpha),
                (ModeLabel::new(path, Pol::Minus), beta),
            ],
        )
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        self.amps.as_slice()
    }

    pub fn amplitude(&self, label: ModeLabel) -> Option<Complex64> {
        self.basis.index_of(label).map(|i| self.amps[i])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Probability of finding the photon on `path`, summed over polarization.
    pub fn path_probability(&self, path: Path) -> f64 {
        self.basis
            .labels()
            .iter()
            .zip(self.amps.iter())
            .filter(|(l, _)| l.path == path)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Zero-pads this state into a larger basis.
    pub fn embed(&self, target: &Basis) -> Result<Self> {
        let mut amps = vec![Complex64::new(0.0, 0.0); target.len()];
        for (l, a) in self.basis.labels().iter().zip(self.amps.iter()) {
            let i = target
                .index_of(*l)
                .ok_or_else(|| Error::BasisMismatch(format!("mode {l} missing from target")))?;
            amps[i] = *a;
        }
        Ok(Self {
            basis: target.clone(),
            amps: DVector::from_vec(amps),
        })
    }

    /// `a * x + b * y`. Fails on basis mismatch or if the result exceeds unit norm.
    pub fn superpose(a: Complex64, x: &Self, b: Complex64, y: &Self) -> Result<Self> {
        check_basis(&x.basis, &y.basis)?;
        let amps = (&x.amps * a + &y.amps * b).data.as_vec().clone();
        Self::new(x.basis.clone(), amps)
    }

    pub(crate) fn from_parts(basis: Basis, amps: DVector<Complex64>) -> Self {
        Self { basis, amps }
    }
}

fn check_basis(a: &Basis, b: &Basis) -> Result<()> {
    if a != b {
        return Err(Error::BasisMismatch(format!(
            "bases of {} and {} modes differ",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// A linear optical map over a basis. Always unitary or subunitary.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix {
    basis: Basis,
    entries: DMatrix<Complex64>,
}

impl TransferMatrix {
    /// Rejects non-square input and any matrix that could amplify a state.
    pub fn new(basis: Basis, entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != basis.len() || entries.ncols() != basis.len() {
            return Err(Error::BasisMismatch(format!(
                "{}x{} matrix over {} modes",
                entries.nrows(),
                entries.ncols(),
                basis.len()
            )));
        }
        let m = Self { basis, entries };
        let s = m.max_singular_value();
        if !s.is_finite() || s > 1.0 + NORM_SLACK {
            return Err(invalid(format!("largest singular value {s} exceeds 1")));
        }
        Ok(m)
    }

    pub fn identity(basis: Basis) -> Self {
        let n = basis.len();
        Self {
            basis,
            entries: DMatrix::identity(n, n),
        }
    }

    /// Builds a diagonal matrix from a per-mode factor.
    pub(crate) fn diagonal(basis: Basis, f: impl Fn(ModeLabel) -> Complex64) -> Self {
        let d = DVector::from_iterator(basis.len(), basis.labels().iter().map(|&l| f(l)));
        Self {
            basis,
            entries: DMatrix::from_diagonal(&d),
        }
    }

    pub(crate) fn from_parts(basis: Basis, entries: DMatrix<Complex64>) -> Self {
        Self { basis, entries }
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    /// Amplitude for `input` to end up in `output`.
    pub fn entry(&self, output: ModeLabel, input: ModeLabel) -> Option<Complex64> {
        let r = self.basis.index_of(output)?;
        let c = self.basis.index_of(input)?;
        Some(self.entries[(r, c)])
    }

    pub fn adjoint(&self) -> Self {
        Self {
            basis: self.basis.clone(),
            entries: self.entries.adjoint(),
        }
    }

    /// Largest entry of |U^dagger U - I|.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.basis.len();
        let g = self.entries.adjoint() * &self.entries - DMatrix::<Complex64>::identity(n, n);
        g.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_defect() < tol
    }

    pub fn max_singular_value(&self) -> f64 {
        if self.basis.is_empty() {
            return 0.0;
        }
        self.entries
            .clone()
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, s: &ModeState) -> Result<ModeState> {
        check_basis(&self.basis, &s.basis)?;
        Ok(ModeState::from_parts(
            self.basis.clone(),
            &self.entries * &s.amps,
        ))
    }

    /// The map that applies `self` first, then `next`.
    pub fn then(&self, next: &Self) -> Result<Self> {
        compose(self, next)
    }
}

pub fn apply(m: &TransferMatrix, s: &ModeState) -> Result<ModeState> {
    m.apply(s)
}

/// `second · first`: the element `first` acts before `second`.
pub fn compose(first: &TransferMatrix, second: &TransferMatrix) -> Result<TransferMatrix> {
    check_basis(&first.basis, &second.basis)?;
    Ok(TransferMatrix::from_parts(
        first.basis.clone(),
        &second.entries * &first.entries,
    ))
}

/// Composes a chain of elements in the order light meets them.
pub fn compose_chain(elements: &[TransferMatrix]) -> Result<TransferMatrix> {
    let (first, rest) = elements
        .split_first()
        .ok_or_else(|| invalid("empty element chain"))?;
    rest.iter().try_fold(first.clone(), |acc, m| compose(&acc, m))
}

/// True when `x = c · y` for some unit complex `c`, up to `tol` per amplitude.
///
/// `c` is read off the mode where `|x| + |y|` is largest.
pub fn global_phase_equal(x: &ModeState, y: &ModeState, tol: f64) -> Result<bool> {
    Ok(global_phase_deviation(x, y)? <= tol)
}

/// Largest per-mode deviation `max |x - c·y|` after aligning the global phase.
pub fn global_phase_deviation(x: &ModeState, y: &ModeState) -> Result<f64> {
    check_basis(&x.basis, &y.basis)?;
    let (k, weight) = x
        .amps
        .iter()
        .zip(y.amps.iter())
        .map(|(a, b)| a.norm() + b.norm())
        .enumerate()
        .fold((0, 0.0), |best, (i, w)| if w > best.1 { (i, w) } else { best });
    if weight == 0.0 {
        return Err(invalid("both states are zero"));
    }
    let (xk, yk) = (x.amps[k], y.amps[k]);
    let c = if xk.norm() == 0.0 || yk.norm() == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        let r = xk / yk;
        r / r.norm()
    };
    Ok(x.amps
        .iter()
        .zip(y.amps.iter())
        .map(|(a, b)| (a - c * b).norm())
        .fold(0.0, f64::max))
}

impl Add for &ModeState {
    type Output = Result<ModeState>;

    fn add(self, rhs: Self) -> Self::Output {
        let one = Complex64::new(1.0, 0.0);
        ModeState::superpose(one, self, one, rhs)
    }
}

impl Mul<&ModeState> for Complex64 {
    type Output = Result<ModeState>;

    fn mul(self, rhs: &ModeState) -> Self::Output {
        let zero = ModeState::zero(rhs.basis.clone());
        ModeState::superpose(self, rhs, Complex64::new(0.0, 0.0), &zero)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn swap_paths(p: Path, q: Path) -> TransferMatrix {
        let basis = Basis::full();
        let n = basis.len();
        let mut m = DMatrix::zeros(n, n);
        for (j, l) in basis.labels().iter().enumerate() {
            let target = match l.path {
                x if x == p => ModeLabel::new(q, l.pol),
                x if x == q => ModeLabel::new(p, l.pol),
                _ => *l,
            };
            m[(basis.index_of(target).unwrap(), j)] = c(1.0, 0.0);
        }
        TransferMatrix::new(basis, m).unwrap()
    }

    #[test]
    fn canonical_ordering_is_path_major() {
        let b = Basis::full();
        assert_eq!(b.len(), 12);
        assert_eq!(b.labels()[0], ModeLabel::new(Path::A, Pol::Plus));
        assert_eq!(b.labels()[1], ModeLabel::new(Path::A, Pol::Minus));
        assert_eq!(b.labels()[11], ModeLabel::new(Path::F, Pol::Minus));
        assert_eq!(b.labels()[9].to_string(), "e-");
    }

    #[test]
    fn duplicate_basis_labels_rejected() {
        let l = ModeLabel::new(Path::A, Pol::Plus);
        assert!(Basis::new(vec![l, l]).is_err());
    }

    #[test]
    fn overnormalized_state_rejected() {
        let r = ModeState::polarized(Path::A, c(1.0, 0.0), c(0.1, 0.0));
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn identity_leaves_state_unchanged() {
        let s = ModeState::polarized(Path::B, c(0.6, 0.0), c(0.0, 0.8)).unwrap();
        let out = TransferMatrix::identity(Basis::full()).apply(&s).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn swap_twice_is_identity() {
        let s = ModeState::polarized(Path::E, c(0.6, 0.0), c(0.0, 0.8)).unwrap();
        let m = swap_paths(Path::E, Path::F);
        let once = m.apply(&s).unwrap();
        assert!((once.path_probability(Path::F) - 1.0).abs() < 1e-15);
        assert_eq!(m.apply(&once).unwrap(), s);
    }

    #[test]
    fn balanced_splitter_routes_symmetric_input_to_one_port() {
        // (1/sqrt2)[[1, i],[i, 1]] acting on (|a> + |b>)/sqrt2 written out by hand:
        // out1 = (1 + i)/2, out2 = (i + 1)/2 -> equal split. The input
        // (|a> - i|b>)/sqrt2 instead gives out1 = (1 + 1)/2 = 1, out2 = 0.
        let basis = Basis::on_paths(&[Path::A, Path::B]);
        let h = FRAC_1_SQRT_2;
        let i = c(0.0, 1.0);
        let mut m = DMatrix::zeros(4, 4);
        for pol in 0..2 {
            m[(pol, pol)] = c(h, 0.0);
            m[(pol, 2 + pol)] = i * h;
            m[(2 + pol, pol)] = i * h;
            m[(2 + pol, 2 + pol)] = c(h, 0.0);
        }
        let bs = TransferMatrix::new(basis.clone(), m).unwrap();
        assert!(bs.is_unitary(1e-12));
        let s = ModeState::from_pairs(
            basis,
            &[
                (ModeLabel::new(Path::A, Pol::Plus), c(h, 0.0)),
                (ModeLabel::new(Path::B, Pol::Plus), c(0.0, -h)),
            ],
        )
        .unwrap();
        let out = bs.apply(&s).unwrap();
        assert!((out.path_probability(Path::A) - 1.0).abs() < 1e-15);
        assert!(out.path_probability(Path::B) < 1e-30);
    }

    #[test]
    fn compose_with_identity_and_adjoint() {
        let u = swap_paths(Path::C, Path::D);
        let id = TransferMatrix::identity(Basis::full());
        assert_eq!(compose(&u, &id).unwrap(), u);
        let back = compose(&u, &u.adjoint()).unwrap();
        assert!(back.is_unitary(1e-12));
        let diff = (back.entries() - id.entries()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn basis_mismatch_rejected() {
        let small = TransferMatrix::identity(Basis::on_paths(&[Path::A]));
        let s = ModeState::polarized(Path::A, c(1.0, 0.0), c(0.0, 0.0)).unwrap();
        assert!(matches!(small.apply(&s), Err(Error::BasisMismatch(_))));
        let full = TransferMatrix::identity(Basis::full());
        assert!(matches!(compose(&small, &full), Err(Error::BasisMismatch(_))));
    }

    #[test]
    fn amplifying_matrix_rejected() {
        let basis = Basis::on_paths(&[Path::A]);
        let m = DMatrix::from_diagonal_element(2, 2, c(1.5, 0.0));
        assert!(TransferMatrix::new(basis, m).is_err());
    }

    #[test]
    fn embedding_zero_pads() {
        let small = ModeState::from_pairs(
            Basis::on_paths(&[Path::C]),
            &[(ModeLabel::new(Path::C, Pol::Minus), c(0.0, 1.0))],
        )
        .unwrap();
        let big = small.embed(&Basis::full()).unwrap();
        assert_eq!(big.amplitude(ModeLabel::new(Path::C, Pol::Minus)), Some(c(0.0, 1.0)));
        assert!((big.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn global_phase_cases() {
        let x = ModeState::polarized(Path::A, c(0.6, 0.0), c(0.0, 0.8)).unwrap();
        let y = (Complex64::from_polar(1.0, PI / 3.0) * &x).unwrap();
        assert!(global_phase_equal(&x, &y, 1e-12).unwrap());

        let z = ModeState::polarized(Path::A, c(0.8, 0.0), c(0.0, -0.6)).unwrap();
        let inner: Complex64 = x
            .amplitudes()
            .iter()
            .zip(z.amplitudes())
            .map(|(a, b)| a.conj() * b)
            .sum();
        assert!(inner.norm() < 1e-15);
        assert!(!global_phase_equal(&x, &z, 1e-6).unwrap());

        let zero = ModeState::zero(Basis::full());
        assert!(global_phase_equal(&zero, &zero, 1e-6).is_err());
    }
}
