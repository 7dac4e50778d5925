//! Pole-phase warping of the LPC synthesis filter.
//!
//! The prediction polynomial is factored through the eigenvalues of its
//! companion matrix, the roots are split into conjugate pairs and real roots,
//! each pair's phase is scaled by a per-utterance factor and the polynomial is
//! rebuilt from the moved roots. Magnitudes are never touched, so a
//! minimum-phase input stays minimum-phase.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};

use nalgebra::linalg::balancing::balance_parlett_reinsch;
use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::lpc::LpcModel;

/// Roots with a smaller imaginary part are classified as real.
pub const REAL_ROOT_TOLERANCE: f64 = 1e-8;
/// Maximum distance between a root and its partner's conjugate.
pub const CONJUGATE_TOLERANCE: f64 = 1e-6;
/// Pole magnitudes are clamped to this during classification.
pub const MAX_POLE_MAGNITUDE: f64 = 0.9999;
/// Warped phases are kept this far from 0 and pi.
pub const PHASE_MARGIN: f64 = 1e-3;

const ROOT_RESIDUAL_TOLERANCE: f64 = 1e-6;
const SCHUR_EPS: f64 = 1e-15;
const SCHUR_MAX_ITER: usize = 10_000;
const POLISH_STEPS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoleError {
    #[error("polynomial has no roots (order 0)")]
    EmptyPolynomial,
    #[error("companion eigen-solver did not converge for order {0}")]
    NoConvergence(usize),
    #[error("root {root} leaves residual {residual:e}")]
    InaccurateRoot { root: Complex64, residual: f64 },
    #[error("complex root {0} has no conjugate partner")]
    UnpairedRoot(Complex64),
    #[error("invalid warp range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
}

/// Roots of `z^P - a_1 z^{P-1} - ... - a_P`, the poles of `1 / A(z)`.
pub fn find_roots(model: &LpcModel) -> Result<Vec<Complex64>, PoleError> {
    let p = model.order();
    if p == 0 {
        return Err(PoleError::EmptyPolynomial);
    }
    // monic coefficients, highest power first after the implicit leading 1
    let monic: Vec<f64> = model.coeffs().iter().map(|a| -a).collect();

    let mut companion = DMatrix::from_fn(p, p, |i, j| {
        if i == 0 {
            -monic[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    balance_parlett_reinsch(&mut companion);
    let schur =
        Schur::try_new(companion, SCHUR_EPS, SCHUR_MAX_ITER).ok_or(PoleError::NoConvergence(p))?;
    let mut roots: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();

    for root in &mut roots {
        polish(&monic, root);
        let residual = relative_residual(&monic, *root);
        if residual.is_nan() || residual >= ROOT_RESIDUAL_TOLERANCE {
            return Err(PoleError::InaccurateRoot {
                root: *root,
                residual,
            });
        }
    }
    Ok(roots)
}

/// Value of the monic polynomial and its derivative at `z`.
fn eval_monic(monic: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(1.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in monic {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

fn relative_residual(monic: &[f64], z: Complex64) -> f64 {
    let (p, _) = eval_monic(monic, z);
    let r = z.norm();
    let mut scale = 1.0;
    for &c in monic {
        scale = scale * r + c.abs();
    }
    p.norm() / scale
}

/// Newton steps that are kept only while they shrink the residual.
/// Conjugate inputs stay exact conjugates since the coefficients are real.
fn polish(monic: &[f64], root: &mut Complex64) {
    let mut best = eval_monic(monic, *root).0.norm();
    for _ in 0..POLISH_STEPS {
        let (p, dp) = eval_monic(monic, *root);
        if best == 0.0 || dp.norm() == 0.0 {
            return;
        }
        let candidate = *root - p / dp;
        let r = eval_monic(monic, candidate).0.norm();
        if r.is_nan() || r >= best {
            return;
        }
        best = r;
        *root = candidate;
    }
}

/// One conjugate pair, represented by its upper-half-plane member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolePair {
    pub magnitude: f64,
    pub phase: f64,
}

impl PolePair {
    pub fn root(&self) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.phase)
    }

    pub fn freq_hz(&self, sample_rate: u32) -> f64 {
        self.phase * sample_rate as f64 / (2.0 * PI)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoleSet {
    /// Sorted by ascending phase.
    pub pairs: Vec<PolePair>,
    pub reals: Vec<f64>,
}

impl PoleSet {
    pub fn degree(&self) -> usize {
        2 * self.pairs.len() + self.reals.len()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.magnitude)
            .chain(self.reals.iter().map(|r| r.abs()))
            .fold(0.0, f64::max)
    }

    fn sort(&mut self) {
        self.pairs.sort_by(|a, b| a.phase.total_cmp(&b.phase));
    }
}

/// Splits roots into real roots and conjugate pairs sorted by phase.
pub fn classify_and_sort(roots: &[Complex64]) -> Result<PoleSet, PoleError> {
    let mut set = PoleSet::default();
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for &r in roots {
        if r.im.abs() < REAL_ROOT_TOLERANCE {
            set.reals
                .push(r.re.clamp(-MAX_POLE_MAGNITUDE, MAX_POLE_MAGNITUDE));
        } else if r.im > 0.0 {
            upper.push(r);
        } else {
            lower.push(Some(r));
        }
    }

    for u in upper {
        let nearest = lower
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (i, (u - l.conj()).norm())))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((i, dist)) if dist <= CONJUGATE_TOLERANCE => {
                let partner = lower[i].take().unwrap_or(u.conj());
                let rep = (u + partner.conj()) * 0.5;
                set.pairs.push(PolePair {
                    magnitude: rep.norm().min(MAX_POLE_MAGNITUDE),
                    phase: rep.arg(),
                });
            }
            _ => return Err(PoleError::UnpairedRoot(u)),
        }
    }
    if let Some(orphan) = lower.into_iter().flatten().next() {
        return Err(PoleError::UnpairedRoot(orphan));
    }
    set.sort();
    Ok(set)
}

/// 32 bytes that seed one utterance's warp-factor stream.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedMaterial(pub [u8; 32]);

impl fmt::Debug for SeedMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SeedMaterial({self})")
    }
}

impl fmt::Display for SeedMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Warping factors for one utterance, shared read-only by all of its frames.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpPlan {
    factors: Vec<f64>,
    range_lo: f64,
    range_hi: f64,
    seed_material: Option<SeedMaterial>,
}

impl WarpPlan {
    /// A plan with explicit factors, bypassing the random draw.
    pub fn forced(factors: Vec<f64>) -> Result<Self, PoleError> {
        let lo = factors.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = factors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if factors.is_empty() || lo.is_nan() || lo <= 0.0 || !hi.is_finite() {
            return Err(PoleError::InvalidRange { lo, hi });
        }
        Ok(Self {
            factors,
            range_lo: lo,
            range_hi: hi,
            seed_material: None,
        })
    }

    pub fn identity(count: usize) -> Self {
        Self {
            factors: vec![1.0; count],
            range_lo: 1.0,
            range_hi: 1.0,
            seed_material: None,
        }
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn range(&self) -> (f64, f64) {
        (self.range_lo, self.range_hi)
    }

    pub fn seed_material(&self) -> Option<&SeedMaterial> {
        self.seed_material.as_ref()
    }

    /// Factor for the `pair_index`-th lowest-phase pair. Plans shorter than
    /// the pair count are cycled.
    pub fn factor_for(&self, pair_index: usize) -> f64 {
        if self.factors.is_empty() {
            1.0
        } else {
            self.factors[pair_index % self.factors.len()]
        }
    }
}

/// Draws `count` factors uniformly from `[lo, hi]`.
///
/// The stream is ChaCha20 keyed by `seed`; each draw takes one `u64` and maps
/// its top 53 bits to `u in [0, 1)`, giving `lo + (hi - lo) * u`.
pub fn sample_warp_factors(
    lo: f64,
    hi: f64,
    count: usize,
    seed: &SeedMaterial,
) -> Result<WarpPlan, PoleError> {
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(PoleError::InvalidRange { lo, hi });
    }
    let mut rng = ChaCha20Rng::from_seed(seed.0);
    let factors = (0..count)
        .map(|_| {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            (lo + (hi - lo) * u).min(hi)
        })
        .collect();
    Ok(WarpPlan {
        factors,
        range_lo: lo,
        range_hi: hi,
        seed_material: Some(*seed),
    })
}

/// What happened to one pair, indexed in pre-warp phase order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairWarp {
    pub pair_index: usize,
    pub factor: f64,
    pub magnitude_before: f64,
    pub magnitude_after: f64,
    pub phase_before: f64,
    pub phase_after: f64,
}

/// Scales each pair's phase by its factor, clamped to `[1e-3, pi - 1e-3]`.
pub fn warp_pairs(poles: &PoleSet, plan: &WarpPlan) -> Vec<PairWarp> {
    poles
        .pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let factor = plan.factor_for(i);
            PairWarp {
                pair_index: i,
                factor,
                magnitude_before: pair.magnitude,
                magnitude_after: pair.magnitude,
                phase_before: pair.phase,
                phase_after: (factor * pair.phase).clamp(PHASE_MARGIN, PI - PHASE_MARGIN),
            }
        })
        .collect()
}

/// Applies `plan` to the pairs; real roots pass through.
pub fn warp_poles(poles: &PoleSet, plan: &WarpPlan) -> PoleSet {
    let mut out = PoleSet {
        pairs: warp_pairs(poles, plan)
            .into_iter()
            .map(|w| PolePair {
                magnitude: w.magnitude_after,
                phase: w.phase_after,
            })
            .collect(),
        reals: poles.reals.clone(),
    };
    out.sort();
    out
}

/// Expands the pole set into predictor coefficients `a_1..a_P`.
///
/// Pairs contribute real quadratics `1 - 2 m cos(theta) z^-1 + m^2 z^-2`, so
/// the product has real coefficients by construction.
pub fn poly_from_roots(poles: &PoleSet) -> Vec<f64> {
    let mut poly = Vec::with_capacity(poles.degree() + 1);
    poly.push(1.0);
    for pair in &poles.pairs {
        let b1 = -2.0 * pair.magnitude * pair.phase.cos();
        let b2 = pair.magnitude * pair.magnitude;
        convolve_into(&mut poly, &[b1, b2]);
    }
    for &r in &poles.reals {
        convolve_into(&mut poly, &[-r]);
    }
    poly[1..].iter().map(|c| -c).collect()
}

/// Multiplies `poly` in place by `1 + tail[0] z^-1 + tail[1] z^-2 + ...`.
fn convolve_into(poly: &mut Vec<f64>, tail: &[f64]) {
    let old_len = poly.len();
    poly.resize(old_len + tail.len(), 0.0);
    for i in (0..old_len).rev() {
        let c = poly[i];
        for (k, t) in tail.iter().enumerate() {
            poly[i + k + 1] += c * t;
        }
    }
}

/// Writes `frame_index,pair_index,magnitude,phase_before,phase_after` rows.
pub fn write_pole_dump<W: Write>(mut out: W, frames: &[(usize, Vec<PairWarp>)]) -> io::Result<()> {
    writeln!(
        out,
        "frame_index,pair_index,magnitude,phase_before,phase_after"
    )?;
    for (frame_index, warps) in frames {
        for w in warps {
            writeln!(
                out,
                "{frame_index},{},{},{},{}",
                w.pair_index, w.magnitude_after, w.phase_before, w.phase_after
            )?;
        }
    }
    Ok(())
}
