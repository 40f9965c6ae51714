//! Closed-form evaluation of the kernel families, multi-feature composition,
//! realification of complex overlaps, and Gram-matrix assembly.
//!
//! Phase kernels encode a feature into the phase of a coherent-state label at
//! fixed modulus `c`; amplitude kernels encode it into the modulus. All the
//! state-overlap formulas here agree with brute-force Fock inner products
//! from [`crate::fockspace`], which the test suites exercise directly.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::AmplitudeNoise;
use crate::error::{Error, Result};
use crate::fockspace::{ln_cosh, HalfInt};

/// Gram matrices count as positive semidefinite when the smallest eigenvalue
/// is above `-PSD_FLOOR_PER_N * n`.
pub const PSD_FLOOR_PER_N: f64 = 1e-8;

/// How a complex overlap enters the real-valued SVM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Realify {
    /// `|K|^2`, the fidelity kernel.
    #[default]
    SquaredModulus,
    /// `Re K`, the real restriction of the complex inner product.
    RealPart,
}

/// How per-feature kernel values combine into one value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Compose {
    /// Tensor-product feature map: multiply the per-feature values.
    #[default]
    Product,
    /// Average the per-feature values, then realify.
    SumThenRealify,
}

/// One kernel family plus its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params")]
pub enum KernelFamily {
    KerrPhasePos { c: f64, lambda: f64, j: HalfInt },
    KerrPhaseNeg { c: f64, lambda: f64, j: HalfInt },
    KerrAmpPos { lambda: f64, j: HalfInt },
    KerrAmpNeg { lambda: f64, j: HalfInt },
    SqueezedPhase { c: f64 },
    SqueezedAmp {},
    #[serde(rename = "RBF")]
    Rbf { sigma: f64 },
    #[serde(rename = "ESS")]
    Ess { l: f64, p: f64 },
    #[serde(rename = "QEC")]
    Qec { l: f64, lambda: f64, j: HalfInt },
}

impl KernelFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        match *self {
            KernelFamily::KerrPhasePos { c, lambda, .. } => {
                if !(c > 0.0) {
                    return bad(format!("KerrPhasePos needs c > 0, got {c}"));
                }
                if !(lambda > 0.0) {
                    return bad(format!("KerrPhasePos needs lambda > 0, got {lambda}"));
                }
            }
            KernelFamily::KerrPhaseNeg { c, lambda, .. } => {
                if !(c > 0.0) {
                    return bad(format!("KerrPhaseNeg needs c > 0, got {c}"));
                }
                if !(lambda < 0.0) {
                    return bad(format!("KerrPhaseNeg needs lambda < 0, got {lambda}"));
                }
                let y = (lambda.abs() / 2.0).sqrt() * c;
                if y >= std::f64::consts::FRAC_PI_2 {
                    return Err(Error::Domain(format!(
                        "KerrPhaseNeg modulus out of domain: sqrt(|lambda|/2) c = {y} >= pi/2"
                    )));
                }
            }
            KernelFamily::KerrAmpPos { lambda, .. } => {
                if !(lambda > 0.0) {
                    return bad(format!("KerrAmpPos needs lambda > 0, got {lambda}"));
                }
            }
            KernelFamily::KerrAmpNeg { lambda, .. } => {
                if !(lambda < 0.0) {
                    return bad(format!("KerrAmpNeg needs lambda < 0, got {lambda}"));
                }
            }
            KernelFamily::SqueezedPhase { c } => {
                if !(c > 0.0) {
                    return bad(format!("SqueezedPhase needs c > 0, got {c}"));
                }
            }
            KernelFamily::SqueezedAmp {} => {}
            KernelFamily::Rbf { sigma } => {
                if !(sigma > 0.0) {
                    return bad(format!("RBF needs sigma > 0, got {sigma}"));
                }
            }
            KernelFamily::Ess { l, p } => {
                if !(l > 0.0 && p > 0.0) {
                    return bad(format!("ESS needs l > 0 and p > 0, got l={l}, p={p}"));
                }
            }
            KernelFamily::Qec { l, lambda, .. } => {
                if !(l > 0.0) {
                    return bad(format!("QEC needs l > 0, got {l}"));
                }
                if !(lambda < 0.0) {
                    return bad(format!("QEC needs lambda < 0, got {lambda}"));
                }
            }
        }
        Ok(())
    }

    /// Phase-encoded families produce genuinely complex overlaps.
    pub fn is_complex_valued(&self) -> bool {
        matches!(
            self,
            KernelFamily::KerrPhasePos { .. }
                | KernelFamily::KerrPhaseNeg { .. }
                | KernelFamily::SqueezedPhase { .. }
        )
    }

    /// One-dimensional kernel value, optionally with an additive perturbation
    /// of the encoding-amplitude argument (the modulus `c` for phase families,
    /// `|x - y|` otherwise).
    fn eval1d(&self, x: f64, y: f64, amp_delta: f64) -> Result<Complex64> {
        let v = match *self {
            KernelFamily::KerrPhasePos { c, lambda, j } => {
                kerr_phase_pos(x, y, c + amp_delta, lambda, j)
            }
            KernelFamily::KerrPhaseNeg { c, lambda, j } => {
                kerr_phase_neg(x, y, c + amp_delta, lambda, j)?
            }
            KernelFamily::KerrAmpPos { lambda, j } => {
                real_to_c(amp_kernel_pos_arg((x - y).abs() + amp_delta, lambda, j))
            }
            KernelFamily::KerrAmpNeg { lambda, j } => {
                real_to_c(amp_kernel_neg_arg((x - y).abs() + amp_delta, lambda, j))
            }
            KernelFamily::SqueezedPhase { c } => squeezed_phase(x, y, c + amp_delta),
            KernelFamily::SqueezedAmp {} => {
                real_to_c((-0.5 * ln_cosh((x - y).abs() + amp_delta)).exp())
            }
            KernelFamily::Rbf { sigma } => {
                let d = (x - y).abs() + amp_delta;
                real_to_c((-d * d / (2.0 * sigma * sigma)).exp())
            }
            KernelFamily::Ess { l, p } => {
                let d = (x - y).abs() + amp_delta;
                real_to_c(ess_arg(d, l, p))
            }
            KernelFamily::Qec { l, lambda, j } => {
                let d = (x - y).abs() + amp_delta;
                real_to_c(qec_arg(d, l, lambda, j))
            }
        };
        Ok(v)
    }
}

/// A kernel family together with its realification and composition policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub family: KernelFamily,
    #[serde(default)]
    pub realify: Realify,
    #[serde(default)]
    pub compose: Compose,
}

impl KernelSpec {
    pub fn new(family: KernelFamily) -> Self {
        Self {
            family,
            realify: Realify::default(),
            compose: Compose::default(),
        }
    }

    pub fn with_realify(mut self, realify: Realify) -> Self {
        self.realify = realify;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()
    }
}

fn real_to_c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// `t^m` for integer `m >= 0` without overflow for large exponents.
fn real_pow_uint(t: f64, m: u32) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if t == 0.0 {
        return 0.0;
    }
    let mag = (m as f64 * t.abs().ln()).exp();
    if t < 0.0 && m % 2 == 1 {
        -mag
    } else {
        mag
    }
}

/// Shared core of the hyperbolic phase kernels, evaluated in log space:
/// `sech^{2 twoj}(x)^... = exp(-2 twoj ln cosh x) / (1 - e^{i dphi} tanh^2 x)^{twoj}`.
fn phase_pos_core(dphi: f64, x: f64, twoj: f64) -> Complex64 {
    if dphi == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let t2 = x.tanh().powi(2);
    let denom = Complex64::new(1.0, 0.0) - Complex64::from_polar(t2, dphi);
    let ln_re = -2.0 * twoj * ln_cosh(x) - twoj * denom.norm().ln();
    let arg = -twoj * denom.arg();
    Complex64::from_polar(ln_re.exp(), arg)
}

/// Overlap of two phase-encoded hyperbolic-family states at fixed modulus
/// `c`: depends on the inputs only through `phi1 - phi2` and equals 1 there.
pub fn kerr_phase_pos(phi1: f64, phi2: f64, c: f64, lambda: f64, j: HalfInt) -> Complex64 {
    debug_assert!(lambda > 0.0);
    let x = (lambda / 2.0).sqrt() * c.abs();
    phase_pos_core(phi1 - phi2, x, j.twice() as f64)
}

/// Overlap of two phase-encoded compact-family states; `2pi`-periodic in
/// `phi1 - phi2` and exactly 1 at zero phase difference.
pub fn kerr_phase_neg(phi1: f64, phi2: f64, c: f64, lambda: f64, j: HalfInt) -> Result<Complex64> {
    debug_assert!(lambda < 0.0);
    let y = (lambda.abs() / 2.0).sqrt() * c.abs();
    if y >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::Domain(format!(
            "phase-kernel modulus out of domain: sqrt(|lambda|/2) c = {y} >= pi/2"
        )));
    }
    let dphi = phi1 - phi2;
    if dphi == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let twoj = j.twice() as f64;
    let t2 = y.tan().powi(2);
    let numer = Complex64::new(1.0, 0.0) + Complex64::from_polar(t2, dphi);
    let ln_re = twoj * numer.norm().ln() + 2.0 * twoj * y.cos().abs().ln();
    let arg = twoj * numer.arg();
    Ok(Complex64::from_polar(ln_re.exp(), arg))
}

fn amp_kernel_pos_arg(delta: f64, lambda: f64, j: HalfInt) -> f64 {
    let x = (lambda / 2.0).sqrt() * delta;
    (-(j.twice() as f64) * ln_cosh(x)).exp()
}

/// Stationary amplitude kernel of the hyperbolic family:
/// `cosh^{-2j}(sqrt(lambda/2) |x - y|)`, valued in `(0, 1]`.
pub fn kerr_amp_pos(x: f64, y: f64, lambda: f64, j: HalfInt) -> f64 {
    debug_assert!(lambda > 0.0);
    amp_kernel_pos_arg((x - y).abs(), lambda, j)
}

fn amp_kernel_neg_arg(delta: f64, lambda: f64, j: HalfInt) -> f64 {
    let y = (lambda.abs() / 2.0).sqrt() * delta;
    real_pow_uint(y.cos(), j.twice())
}

/// Periodic amplitude kernel of the compact family:
/// `cos^{2j}(sqrt(|lambda|/2) |x - y|)`; negative values occur for odd `2j`.
pub fn kerr_amp_neg(x: f64, y: f64, lambda: f64, j: HalfInt) -> f64 {
    debug_assert!(lambda < 0.0);
    amp_kernel_neg_arg((x - y).abs(), lambda, j)
}

fn ess_arg(delta: f64, l: f64, p: f64) -> f64 {
    let s = (std::f64::consts::PI * delta / p).sin();
    (-(2.0 / (l * l)) * s * s).exp()
}

/// Exponential sine-squared kernel with length scale `l` and period `p`.
pub fn ess(x: f64, y: f64, l: f64, p: f64) -> f64 {
    ess_arg((x - y).abs(), l, p)
}

fn qec_arg(delta: f64, l: f64, lambda: f64, j: HalfInt) -> f64 {
    let y = (lambda.abs() / 2.0).sqrt() * delta;
    let c = real_pow_uint(y.cos(), j.twice());
    (-(2.0 / (l * l)) * (1.0 - c)).exp()
}

/// Periodic kernel generalizing [`ess`] through the compact-family cosine:
/// `exp(-(2/l^2) (1 - cos^{2j}(sqrt(|lambda|/2) |x - y|)))`.
///
/// At `2j = 2` this is exactly [`ess`] with `p = pi / sqrt(|lambda|/2)`. The
/// `1 - cos^{2j}` argument keeps the diagonal at 1 and the kernel positive
/// semidefinite; see the project notes on the sign of the exponent.
pub fn qec(x: f64, y: f64, l: f64, lambda: f64, j: HalfInt) -> f64 {
    debug_assert!(lambda < 0.0);
    qec_arg((x - y).abs(), l, lambda, j)
}

/// Gaussian radial basis kernel `exp(-|x - y|^2 / (2 sigma^2))` on scalars.
pub fn rbf(x: f64, y: f64, sigma: f64) -> f64 {
    let d = x - y;
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// General overlap `<a1|a2>` of two coherent-state labels with independent
/// moduli and phases, for either sign of `lambda`.
///
/// For `lambda > 0` this is
/// `(sech^2 x1 sech^2 x2)^j / (1 - e^{i(phi1-phi2)} tanh x1 tanh x2)^{2j}`,
/// and for `lambda < 0`
/// `(cos y1 cos y2 + e^{i(phi1-phi2)} sin y1 sin y2)^{2j}`, with
/// `x_i`/`y_i = sqrt(|lambda|/2) r_i`.
pub fn kerr_overlap(
    a1: &crate::fockspace::PolarAmplitude,
    a2: &crate::fockspace::PolarAmplitude,
    params: &crate::fockspace::KerrParams,
) -> Result<Complex64> {
    let scale = params.arg_scale();
    let (x1, x2) = (scale * a1.r(), scale * a2.r());
    let dphi = a1.phi() - a2.phi();
    let twoj = params.j().twice() as f64;
    if params.is_positive() {
        let denom = Complex64::new(1.0, 0.0) - Complex64::from_polar(x1.tanh() * x2.tanh(), dphi);
        let ln_mag = -twoj * (ln_cosh(x1) + ln_cosh(x2)) - twoj * denom.norm().ln();
        Ok(Complex64::from_polar(ln_mag.exp(), -twoj * denom.arg()))
    } else {
        let fp2 = std::f64::consts::FRAC_PI_2;
        if x1 >= fp2 || x2 >= fp2 {
            return Err(Error::Domain(format!(
                "modulus outside compact domain: sqrt(|lambda|/2) r = {}",
                x1.max(x2)
            )));
        }
        let z = Complex64::new(x1.cos() * x2.cos(), 0.0)
            + Complex64::from_polar(x1.sin() * x2.sin(), dphi);
        Ok(z.powu(params.j().twice()))
    }
}

/// Phase kernel of the squeezed state: the hyperbolic phase kernel pinned to
/// exponent `-1/2` (`lambda = 2`, `2j = 1/2`).
pub fn squeezed_phase(phi1: f64, phi2: f64, c: f64) -> Complex64 {
    phase_pos_core(phi1 - phi2, c.abs(), 0.5)
}

/// Amplitude kernel of the squeezed state, `cosh^{-1/2}(|x - y|)`.
pub fn squeezed_amp(x: f64, y: f64) -> f64 {
    (-0.5 * ln_cosh((x - y).abs())).exp()
}

/// Multi-feature kernel value: per-feature one-dimensional kernels combined
/// by the composition rule, then realified.
pub fn feature_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    feature_kernel_perturbed(spec, x, y, |_| 0.0)
}

fn feature_kernel_perturbed<D>(spec: &KernelSpec, x: &[f64], y: &[f64], delta: D) -> Result<f64>
where
    D: Fn(usize) -> f64,
{
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidParams("feature vectors must be non-empty".into()));
    }
    let combined = match spec.compose {
        Compose::Product => {
            let mut acc = Complex64::new(1.0, 0.0);
            for (f, (&xi, &yi)) in x.iter().zip(y).enumerate() {
                acc *= spec.family.eval1d(xi, yi, delta(f))?;
            }
            acc
        }
        Compose::SumThenRealify => {
            let mut acc = Complex64::default();
            for (f, (&xi, &yi)) in x.iter().zip(y).enumerate() {
                acc += spec.family.eval1d(xi, yi, delta(f))?;
            }
            acc / x.len() as f64
        }
    };
    Ok(if spec.family.is_complex_valued() {
        match spec.realify {
            Realify::SquaredModulus => combined.norm_sqr(),
            Realify::RealPart => combined.re,
        }
    } else {
        combined.re
    })
}

/// A symmetric kernel matrix, the spec that produced it, and (once audited)
/// its smallest eigenvalue.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub values: Array2<f64>,
    pub spec: KernelSpec,
    pub min_eigenvalue: Option<f64>,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Fills `min_eigenvalue` by a full symmetric eigenvalue decomposition
    /// and returns it.
    pub fn audit(&mut self) -> f64 {
        let eigs = crate::numeric::symmetric_eigenvalues(&self.values);
        let min = eigs[0];
        self.min_eigenvalue = Some(min);
        min
    }

    /// PSD up to the numerical floor `-1e-8 n`; requires a prior audit.
    pub fn is_psd_within_floor(&self) -> Option<bool> {
        self.min_eigenvalue
            .map(|m| m >= -PSD_FLOOR_PER_N * self.n() as f64)
    }
}

/// Assembles the symmetric Gram matrix of `feature_kernel` values.
///
/// Row blocks run in parallel; every entry is a pure function of the inputs,
/// so the result is identical for any worker count.
pub fn gram(features: ArrayView2<'_, f64>, spec: &KernelSpec) -> Result<GramMatrix> {
    gram_with_noise(features, spec, None)
}

/// [`gram`] with per-evaluation encoding-amplitude noise.
pub fn gram_with_noise(
    features: ArrayView2<'_, f64>,
    spec: &KernelSpec,
    noise: Option<&AmplitudeNoise>,
) -> Result<GramMatrix> {
    spec.validate()?;
    let n = features.nrows();
    if n < 2 {
        return Err(Error::InvalidParams(format!("gram needs n >= 2, got {n}")));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = features.row(i);
            let xi = xi.as_slice().expect("contiguous row");
            (i..n)
                .map(|jj| {
                    let xj = features.row(jj);
                    feature_kernel_perturbed(spec, xi, xj.as_slice().expect("contiguous row"), |f| {
                        noise.map_or(0.0, |nz| nz.delta(AmplitudeNoise::TAG_TRAIN, i, jj, f))
                    })
                    .map_err(|e| Error::GramEntry {
                        i,
                        j: jj,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            values[[i, i + off]] = v;
            values[[i + off, i]] = v;
        }
    }
    Ok(GramMatrix {
        values,
        spec: spec.clone(),
        min_eigenvalue: None,
    })
}

/// Rectangular matrix of kernel values between new points (rows) and
/// reference points (columns), as needed for prediction.
pub fn cross_gram(
    new_points: ArrayView2<'_, f64>,
    reference: ArrayView2<'_, f64>,
    spec: &KernelSpec,
    noise: Option<&AmplitudeNoise>,
) -> Result<Array2<f64>> {
    spec.validate()?;
    if new_points.ncols() != reference.ncols() {
        return Err(Error::DimensionMismatch {
            expected: reference.ncols(),
            got: new_points.ncols(),
        });
    }
    let m = new_points.nrows();
    let n = reference.nrows();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let xi = new_points.row(i);
            let xi = xi.as_slice().expect("contiguous row");
            (0..n)
                .map(|jj| {
                    let xj = reference.row(jj);
                    feature_kernel_perturbed(spec, xi, xj.as_slice().expect("contiguous row"), |f| {
                        noise.map_or(0.0, |nz| nz.delta(AmplitudeNoise::TAG_CROSS, i, jj, f))
                    })
                    .map_err(|e| Error::GramEntry {
                        i,
                        j: jj,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Array2::zeros((m, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (jj, v) in row.into_iter().enumerate() {
            values[[i, jj]] = v;
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{kerr_state_neg, kerr_state_pos, KerrParams, PolarAmplitude};
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn j(v: f64) -> HalfInt {
        HalfInt::try_from_f64(v).unwrap()
    }

    #[test]
    fn phase_pos_frozen_values() {
        // Identical phases give exactly 1.
        let k = kerr_phase_pos(0.7, 0.7, 1.0, 2.0, j(0.5));
        assert_eq!(k, Complex64::new(1.0, 0.0));
        // dphi = pi, c = 1, lambda = 2, j = 1/2: sech^2(1) / (1 + tanh^2(1)).
        let k = kerr_phase_pos(std::f64::consts::PI, 0.0, 1.0, 2.0, j(0.5));
        let expect = (1.0 / 1.0_f64.cosh().powi(2)) / (1.0 + 1.0_f64.tanh().powi(2));
        assert_abs_diff_eq!(k.re, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(k.re, 0.26580222883407967, epsilon = 1e-8);
        assert_abs_diff_eq!(k.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn phase_pos_matches_fock_inner_product() {
        let p = KerrParams::from_f64(2.0, 1.5).unwrap();
        let c = 0.9;
        for (p1, p2) in [(0.0, 1.0), (2.5, 0.3), (4.0, 4.0)] {
            let s1 = kerr_state_pos(&PolarAmplitude::new(c, p1).unwrap(), &p, 1e-12).unwrap();
            let s2 = kerr_state_pos(&PolarAmplitude::new(c, p2).unwrap(), &p, 1e-12).unwrap();
            let oracle = s1.inner(&s2);
            let closed = kerr_phase_pos(p1, p2, c, 2.0, j(1.5));
            assert!((oracle - closed).norm() < 1e-10, "dphi = {}", p1 - p2);
        }
    }

    #[test]
    fn phase_neg_frozen_values() {
        // dphi = pi at tan^2 = 1 gives the orthogonal antipodal pair.
        let c = std::f64::consts::FRAC_PI_4; // sqrt(|l|/2) c = pi/4 at lambda = -2
        let k = kerr_phase_neg(std::f64::consts::PI, 0.0, c, -2.0, j(0.5)).unwrap();
        assert!(k.norm() < 1e-12);
        // Identical phases exactly 1.
        let k = kerr_phase_neg(1.0, 1.0, 0.5, -2.0, j(2.0)).unwrap();
        assert_eq!(k, Complex64::new(1.0, 0.0));
        // Out-of-domain modulus rejected.
        assert!(kerr_phase_neg(0.0, 1.0, 2.0, -2.0, j(0.5)).is_err());
    }

    #[test]
    fn phase_neg_matches_fock_inner_product() {
        let p = KerrParams::from_f64(-2.0, 2.5).unwrap();
        let c = 0.6;
        for (p1, p2) in [(0.0, 1.0), (2.5, 0.3), (1.0, 1.0 + 2.0 * std::f64::consts::PI)] {
            let s1 = kerr_state_neg(&PolarAmplitude::new(c, p1).unwrap(), &p).unwrap();
            let s2 = kerr_state_neg(&PolarAmplitude::new(c, p2).unwrap(), &p).unwrap();
            let oracle = s1.inner(&s2);
            let closed = kerr_phase_neg(p1, p2, c, -2.0, j(2.5)).unwrap();
            assert!((oracle - closed).norm() < 1e-12);
        }
    }

    #[test]
    fn amp_pos_frozen_values() {
        assert_abs_diff_eq!(kerr_amp_pos(0.3, 0.3, 2.0, j(1.0)), 1.0, epsilon = 1e-15);
        // |x-y| = 1, lambda = 2, j = 1: cosh^{-2}(1).
        let expect = 1.0 / 1.0_f64.cosh().powi(2);
        assert_abs_diff_eq!(kerr_amp_pos(1.5, 0.5, 2.0, j(1.0)), expect, epsilon = 1e-14);
        assert_abs_diff_eq!(expect, 0.41997434161402614, epsilon = 1e-8);
    }

    #[test]
    fn amp_pos_matches_fock_inner_product() {
        // Equal-phase amplitude encoding: overlap of two states with moduli
        // x, y built on a common basis so both tails are below 1e-12.
        use crate::fockspace::{kerr_state_pos_dim, truncation_dim};
        let p = KerrParams::from_f64(2.0, 1.0).unwrap();
        let (x, y) = (1.3_f64, 0.4_f64);
        let dim = truncation_dim(&p, x.max(y), 1e-12).unwrap();
        let s1 = kerr_state_pos_dim(&PolarAmplitude::new(x, 0.0).unwrap(), &p, dim).unwrap();
        let s2 = kerr_state_pos_dim(&PolarAmplitude::new(y, 0.0).unwrap(), &p, dim).unwrap();
        let oracle = s1.inner(&s2);
        assert!((oracle.re - kerr_amp_pos(x, y, 2.0, j(1.0))).abs() < 1e-10);
        assert!(oracle.im.abs() < 1e-12);
    }

    #[test]
    fn amp_pos_rbf_limit() {
        // lambda -> 0, j -> inf with j lambda = 1: kernel -> exp(-d^2/2).
        let big_j = j(10_000.0);
        let lambda = 1.0 / 10_000.0;
        for d in [0.0, 0.5, 1.0, 2.0] {
            let k = kerr_amp_pos(d, 0.0, lambda, big_j);
            assert!(
                (k - (-d * d / 2.0).exp()).abs() < 1e-3,
                "d = {d}: {k} vs {}",
                (-d * d / 2.0).exp()
            );
        }
    }

    #[test]
    fn amp_neg_frozen_values() {
        assert_abs_diff_eq!(kerr_amp_neg(0.7, 0.7, -2.0, j(1.0)), 1.0, epsilon = 1e-15);
        // sqrt(|l|/2) |x-y| = pi/3, j = 1: cos^2(pi/3) = 1/4.
        let d = std::f64::consts::FRAC_PI_3;
        assert_abs_diff_eq!(kerr_amp_neg(d, 0.0, -2.0, j(1.0)), 0.25, epsilon = 1e-14);
        // Odd 2j can go negative.
        let k = kerr_amp_neg(2.0, 0.0, -2.0, j(0.5));
        assert!(k < 0.0);
    }

    #[test]
    fn amp_neg_matches_fock_inner_product() {
        let p = KerrParams::from_f64(-2.0, 1.0).unwrap();
        let (x, y) = (0.9, 0.2);
        let s1 = kerr_state_neg(&PolarAmplitude::new(x, 0.0).unwrap(), &p).unwrap();
        let s2 = kerr_state_neg(&PolarAmplitude::new(y, 0.0).unwrap(), &p).unwrap();
        let oracle = s1.inner(&s2);
        assert!((oracle.re - kerr_amp_neg(x, y, -2.0, j(1.0))).abs() < 1e-12);
    }

    #[test]
    fn ess_frozen_values() {
        assert_abs_diff_eq!(ess(0.4, 0.4, 1.0, 2.0), 1.0, epsilon = 1e-15);
        // Periodicity: |x-y| = p.
        assert_abs_diff_eq!(ess(2.5, 0.5, 1.3, 2.0), 1.0, epsilon = 1e-12);
        // |x-y| = p/2, l = 1: exp(-2).
        assert_abs_diff_eq!(ess(1.0, 0.0, 1.0, 2.0), (-2.0_f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!((-2.0_f64).exp(), 0.1353352832366127, epsilon = 1e-12);
    }

    #[test]
    fn qec_values_and_ess_reduction() {
        // Diagonal is exactly 1.
        assert_eq!(qec(0.3, 0.3, 1.0, -2.0, j(1.0)), 1.0);
        // Where the cosine term vanishes the value drops to exp(-2/l^2).
        let d = std::f64::consts::FRAC_PI_2; // sqrt(|l|/2) d = pi/2 at lambda = -2
        assert_abs_diff_eq!(qec(d, 0.0, 1.0, -2.0, j(1.0)), (-2.0_f64).exp(), epsilon = 1e-12);
        // Symmetry.
        assert_eq!(qec(0.2, 1.4, 0.7, -3.0, j(1.5)), qec(1.4, 0.2, 0.7, -3.0, j(1.5)));
        // 2j = 2 reduces to ESS with p = pi / sqrt(|lambda|/2).
        let p_equiv = std::f64::consts::PI / 1.0;
        for d in [0.1, 0.7, 1.9] {
            assert_abs_diff_eq!(
                qec(d, 0.0, 0.8, -2.0, j(1.0)),
                ess(d, 0.0, 0.8, p_equiv),
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn rbf_and_squeezed_values() {
        assert_abs_diff_eq!(rbf(0.2, 0.2, 0.5), 1.0, epsilon = 1e-15);
        let sigma = 0.7;
        assert_abs_diff_eq!(
            rbf(0.0, sigma * (2.0_f64).sqrt(), sigma),
            (-1.0_f64).exp(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(squeezed_amp(1.0, 0.0), 0.8050181821945921, epsilon = 1e-12);
        // cosh^{-1/2}(1) recomputed directly.
        assert_abs_diff_eq!(
            squeezed_amp(1.0, 0.0),
            1.0 / 1.0_f64.cosh().sqrt(),
            epsilon = 1e-14
        );
        let k = squeezed_phase(0.4, 0.4, 1.0);
        assert_eq!(k, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn phase_kernels_depend_only_on_dphi_and_are_periodic() {
        let shift = 1.234;
        let tau = 2.0 * std::f64::consts::PI;
        let a = kerr_phase_pos(0.3, 1.7, 1.0, 2.0, j(2.0));
        let b = kerr_phase_pos(0.3 + shift, 1.7 + shift, 1.0, 2.0, j(2.0));
        assert!((a - b).norm() < 1e-12);
        let c = kerr_phase_pos(0.3 + tau, 1.7, 1.0, 2.0, j(2.0));
        assert!((a - c).norm() < 1e-12);
    }

    #[test]
    fn stationary_kernels_translate() {
        for shift in [0.0, 3.3, -1.9] {
            assert_abs_diff_eq!(
                kerr_amp_pos(1.0 + shift, 0.2 + shift, 0.5, j(1.5)),
                kerr_amp_pos(1.0, 0.2, 0.5, j(1.5)),
                epsilon = 1e-13
            );
            assert_abs_diff_eq!(
                ess(1.0 + shift, 0.2 + shift, 1.0, 0.9),
                ess(1.0, 0.2, 1.0, 0.9),
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn feature_kernel_product_matches_two_mode_tensor_oracle() {
        // 2-D phase kernel = inner product of 2-mode tensor-product states.
        let p = KerrParams::from_f64(2.0, 1.0).unwrap();
        let c = 0.8;
        let x = [0.4, 2.0];
        let y = [1.1, 0.3];
        let spec = KernelSpec {
            family: KernelFamily::KerrPhasePos {
                c,
                lambda: 2.0,
                j: j(1.0),
            },
            realify: Realify::SquaredModulus,
            compose: Compose::Product,
        };
        let value = feature_kernel(&spec, &x, &y).unwrap();

        let state = |phi: f64| {
            kerr_state_pos(&PolarAmplitude::new(c, phi).unwrap(), &p, 1e-12).unwrap()
        };
        // Tensor product inner product factorizes into per-mode products.
        let inner = state(x[0]).inner(&state(y[0])) * state(x[1]).inner(&state(y[1]));
        assert!((value - inner.norm_sqr()).abs() < 1e-10);
    }

    #[test]
    fn feature_kernel_realify_options() {
        let spec = KernelSpec {
            family: KernelFamily::KerrPhaseNeg {
                c: 0.5,
                lambda: -2.0,
                j: j(1.5),
            },
            realify: Realify::RealPart,
            compose: Compose::Product,
        };
        let x = [0.0, 1.0];
        let y = [2.0, 0.5];
        let re = feature_kernel(&spec, &x, &y).unwrap();
        let sq = feature_kernel(&spec.clone().with_realify(Realify::SquaredModulus), &x, &y).unwrap();
        assert!((-1.0..=1.0).contains(&re));
        assert!((0.0..=1.0).contains(&sq));
        // Identical points give 1 for both.
        assert_abs_diff_eq!(feature_kernel(&spec, &x, &x).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            feature_kernel(&spec.clone().with_realify(Realify::SquaredModulus), &x, &x).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        // Dimension mismatch is rejected.
        assert!(matches!(
            feature_kernel(&spec, &x, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn squared_modulus_equals_density_operator_gram() {
        // |<s_i|s_j>|^2 equals the Hilbert-Schmidt inner product of the
        // projector feature maps, built here by explicit outer products.
        let p = KerrParams::from_f64(-2.0, 1.5).unwrap();
        let phis = [0.0, 0.9, 2.2, 4.4];
        let states: Vec<_> = phis
            .iter()
            .map(|&phi| kerr_state_neg(&PolarAmplitude::new(0.5, phi).unwrap(), &p).unwrap())
            .collect();
        for a in &states {
            for b in &states {
                let fidelity = a.inner(b).norm_sqr();
                // Tr[rho_a rho_b] = sum_{mn} a_m conj(a_n) conj(b_m) b_n
                let mut hs = Complex64::default();
                for (m, am) in a.amplitudes().iter().enumerate() {
                    for (n, an) in a.amplitudes().iter().enumerate() {
                        hs += am * an.conj() * b.amplitudes()[m].conj() * b.amplitudes()[n];
                    }
                }
                assert!((hs.im).abs() < 1e-12);
                assert!((hs.re - fidelity).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_assembly_and_audit() {
        let feats = arr2(&[[0.1, 0.4], [1.0, 2.0], [3.1, 0.2], [2.0, 2.0]]);
        let spec = KernelSpec::new(KernelFamily::Rbf { sigma: 1.0 });
        let mut g = gram(feats.view(), &spec).unwrap();
        assert_eq!(g.n(), 4);
        for i in 0..4 {
            assert_abs_diff_eq!(g.values[[i, i]], 1.0, epsilon = 1e-15);
            for jj in 0..4 {
                assert_eq!(g.values[[i, jj]], g.values[[jj, i]]);
            }
        }
        let min = g.audit();
        assert!(min >= -PSD_FLOOR_PER_N * 4.0);
        assert_eq!(g.is_psd_within_floor(), Some(true));
    }

    #[test]
    fn gram_deterministic_across_worker_counts() {
        let feats = arr2(&[[0.1], [1.0], [2.3], [0.7], [1.9], [0.05]]);
        let spec = KernelSpec::new(KernelFamily::KerrAmpPos {
            lambda: 2.0,
            j: j(1.5),
        });
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let g1 = pool1.install(|| gram(feats.view(), &spec)).unwrap();
        let g4 = pool4.install(|| gram(feats.view(), &spec)).unwrap();
        for (a, b) in g1.values.iter().zip(g4.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn gram_reports_offending_pair() {
        // A modulus outside the compact domain fails with (i, j) context.
        let feats = arr2(&[[0.0], [1.0]]);
        let spec = KernelSpec::new(KernelFamily::KerrPhaseNeg {
            c: 2.0,
            lambda: -2.0,
            j: j(0.5),
        });
        let err = gram(feats.view(), &spec).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn spec_json_schema() {
        let spec = KernelSpec {
            family: KernelFamily::Qec {
                l: 1.0,
                lambda: -2.0,
                j: j(1.5),
            },
            realify: Realify::SquaredModulus,
            compose: Compose::Product,
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            json,
            r#"{"family":"QEC","params":{"l":1.0,"lambda":-2.0,"j":1.5},"realify":"SquaredModulus","compose":"Product"}"#
        );
        let back: KernelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let rbf_json = r#"{"family":"RBF","params":{"sigma":0.5},"realify":"RealPart","compose":"Product"}"#;
        let parsed: KernelSpec = serde_json::from_str(rbf_json).unwrap();
        assert_eq!(parsed.family, KernelFamily::Rbf { sigma: 0.5 });
        assert_eq!(parsed.realify, Realify::RealPart);
    }

    #[test]
    fn family_sign_consistency_enforced() {
        assert!(KernelFamily::KerrPhasePos {
            c: 1.0,
            lambda: -2.0,
            j: j(1.0)
        }
        .validate()
        .is_err());
        assert!(KernelFamily::Qec {
            l: 1.0,
            lambda: 2.0,
            j: j(1.0)
        }
        .validate()
        .is_err());
        assert!(KernelFamily::KerrAmpNeg {
            lambda: -2.0,
            j: j(1.0)
        }
        .validate()
        .is_ok());
    }
}
