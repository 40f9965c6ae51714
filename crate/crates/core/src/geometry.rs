//! Numerical verification of the feature-space geometry: Fubini-Study
//! metrics, constant curvature, constant-curvature embeddings, resolution of
//! the identity under the invariant measure, and the reproducing property of
//! the overlap kernels.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fockspace::{
    kerr_state, kerr_state_pos_dim, truncation_dim_capped, KerrParams, PolarAmplitude, StateVector,
};
use crate::kernels::kerr_overlap;
use crate::numeric::gauss_legendre_on;

/// The diagonal metric components at one point of the `(r, phi)` chart.
#[derive(Clone, Copy, Debug)]
pub struct MetricAtPoint {
    pub g_rr: f64,
    pub g_phiphi: f64,
    /// Expected zero; kept as a diagonality witness.
    pub g_rphi: f64,
    pub point: PolarAmplitude,
    pub params: KerrParams,
}

fn check_r_in_domain(params: &KerrParams, r: f64) -> Result<()> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("r must be >= 0 and finite, got {r}")));
    }
    if r >= params.r_domain_end() {
        return Err(Error::Domain(format!(
            "r = {r} outside the state domain (< {})",
            params.r_domain_end()
        )));
    }
    Ok(())
}

/// Closed-form Fubini-Study metric: `g_rr = j |lambda|`,
/// `g_phiphi = (j/2) sinh^2(sqrt(2 lambda) r)` for `lambda > 0` and the
/// `sin^2` analog for `lambda < 0`.
pub fn metric_closed_form(params: &KerrParams, r: f64) -> Result<MetricAtPoint> {
    check_r_in_domain(params, r)?;
    let j = params.j().value();
    let lam = params.lambda().abs();
    let arg = (2.0 * lam).sqrt() * r;
    let g_phiphi = if params.is_positive() {
        0.5 * j * arg.sinh().powi(2)
    } else {
        0.5 * j * arg.sin().powi(2)
    };
    Ok(MetricAtPoint {
        g_rr: j * lam,
        g_phiphi,
        g_rphi: 0.0,
        point: PolarAmplitude::new(r, 0.0)?,
        params: *params,
    })
}

/// Fubini-Study metric from central-difference state derivatives:
/// `g_uv = Re[ <psi_u|psi_v>/<psi|psi> - <psi_u|psi><psi|psi_v>/<psi|psi>^2 ]`.
///
/// Serves as the independent oracle for [`metric_closed_form`].
pub fn metric_numeric(params: &KerrParams, point: &PolarAmplitude, h: f64) -> Result<MetricAtPoint> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::InvalidParams(format!(
            "step must lie in [1e-6, 1e-3], got {h}"
        )));
    }
    let r = point.r();
    if r - h < 0.0 {
        return Err(Error::Domain("point too close to the r = 0 coordinate degeneracy".into()));
    }
    check_r_in_domain(params, r + h)?;

    // All states on a common basis so inner products see consistent tails.
    let state_at: Box<dyn Fn(f64, f64) -> Result<StateVector>> = if params.is_positive() {
        let dim = truncation_dim_capped(params, r + h, 1e-12, crate::fockspace::DEFAULT_DIM_CAP)?;
        let params = *params;
        Box::new(move |rr: f64, phi: f64| {
            kerr_state_pos_dim(&PolarAmplitude::new(rr, phi)?, &params, dim)
        })
    } else {
        let params = *params;
        Box::new(move |rr: f64, phi: f64| kerr_state(&PolarAmplitude::new(rr, phi)?, &params, 1e-12))
    };

    let phi = point.phi();
    let psi = state_at(r, phi)?;
    let diff = |a: &StateVector, b: &StateVector| -> Vec<Complex64> {
        a.amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(x, y)| (x - y) / (2.0 * h))
            .collect()
    };
    let psi_r = diff(&state_at(r + h, phi)?, &state_at(r - h, phi)?);
    let psi_phi = diff(&state_at(r, phi + h)?, &state_at(r, phi - h)?);

    let inner = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    };
    let norm2 = psi.norm_sqr();
    let amps = psi.amplitudes();
    let g = |u: &[Complex64], v: &[Complex64]| -> f64 {
        let direct = inner(u, v) / norm2;
        let projected = inner(u, amps) * inner(amps, v) / (norm2 * norm2);
        (direct - projected).re
    };
    Ok(MetricAtPoint {
        g_rr: g(&psi_r, &psi_r),
        g_phiphi: g(&psi_phi, &psi_phi),
        g_rphi: g(&psi_r, &psi_phi),
        point: *point,
        params: *params,
    })
}

/// The constant scalar curvature reported for this family: `-2 lambda / j`
/// (negative for the hyperbolic family, positive for the compact one).
pub fn ricci_scalar(params: &KerrParams) -> f64 {
    -2.0 * params.lambda() / params.j().value()
}

/// Diagonal 2-d metric as a function of `r` only.
type MetricFn<'a> = &'a dyn Fn(f64) -> (f64, f64);

/// Scalar curvature of `ds^2 = g_rr(r) dr^2 + g_pp(r) dphi^2` at `r`, with
/// Christoffel symbols and their radial derivative taken by central
/// differences of step `h`.
fn curvature_fd(metric: MetricFn<'_>, r: f64, h: f64) -> f64 {
    // Christoffels of a diagonal r-dependent metric.
    let gamma = |rr: f64| -> [[[f64; 2]; 2]; 2] {
        let (grr_m, gpp_m) = metric(rr - h);
        let (grr_p, gpp_p) = metric(rr + h);
        let (grr, gpp) = metric(rr);
        let dgrr = (grr_p - grr_m) / (2.0 * h);
        let dgpp = (gpp_p - gpp_m) / (2.0 * h);
        let mut out = [[[0.0; 2]; 2]; 2];
        out[0][0][0] = 0.5 / grr * dgrr; // G^r_rr
        out[0][1][1] = -0.5 / grr * dgpp; // G^r_pp
        out[1][0][1] = 0.5 / gpp * dgpp; // G^p_rp
        out[1][1][0] = out[1][0][1];
        out
    };
    let g0 = gamma(r);
    let gm = gamma(r - h);
    let gp = gamma(r + h);
    let dgamma = |l: usize, a: usize, b: usize| (gp[l][a][b] - gm[l][a][b]) / (2.0 * h);

    // R^l_{s mu nu} = d_mu G^l_{nu s} - d_nu G^l_{mu s}
    //                + G^l_{mu m} G^m_{nu s} - G^l_{nu m} G^m_{mu s};
    // only d_r (mu or nu = 0) contributes.
    let riemann = |l: usize, s: usize, mu: usize, nu: usize| -> f64 {
        let mut v = 0.0;
        if mu == 0 {
            v += dgamma(l, nu, s);
        }
        if nu == 0 {
            v -= dgamma(l, mu, s);
        }
        for m in 0..2 {
            v += g0[l][mu][m] * g0[m][nu][s];
            v -= g0[l][nu][m] * g0[m][mu][s];
        }
        v
    };
    let ricci = |s: usize, nu: usize| -> f64 { (0..2).map(|m| riemann(m, s, m, nu)).sum() };
    let (grr, gpp) = metric(r);
    ricci(0, 0) / grr + ricci(1, 1) / gpp
}

/// Scalar curvature of the closed-form metric at each sample, by finite
/// differences with a Richardson consistency check. Samples must stay away
/// from the `r = 0` coordinate degeneracy.
pub fn ricci_numeric(params: &KerrParams, r_samples: &[f64]) -> Result<Vec<f64>> {
    let metric = |rr: f64| -> (f64, f64) {
        let m = metric_closed_form(params, rr).expect("sample validated in-domain");
        (m.g_rr, m.g_phiphi)
    };
    let mut out = Vec::with_capacity(r_samples.len());
    for &r in r_samples {
        if r < 0.05 {
            return Err(Error::Domain(format!(
                "curvature sample r = {r} too close to the coordinate degeneracy (need r >= 0.05)"
            )));
        }
        check_r_in_domain(params, r * (1.0 + 1e-3))?;
        let h0 = 1e-3 * r.max(0.5);
        let k1 = curvature_fd(&metric, r, h0);
        let k2 = curvature_fd(&metric, r, h0 / 2.0);
        let k4 = curvature_fd(&metric, r, h0 / 4.0);
        let e1 = (k1 - k2).abs();
        let e2 = (k2 - k4).abs();
        let scale = k4.abs().max(1e-6);
        if e2 > 1e-12 * scale.max(1.0) && e2 > 0.5 * e1 && e1 > 1e-10 * scale {
            return Err(Error::DerivativeDiverged(format!(
                "curvature at r = {r}: successive estimates {k1}, {k2}, {k4} not converging"
            )));
        }
        // Fourth-order Richardson combination of the two finer estimates.
        out.push((4.0 * k4 - k2) / 3.0);
    }
    Ok(out)
}

/// Embedding of the chart point into the quadric surface in 3-space:
/// hyperboloid sheet for `lambda > 0`, sphere for `lambda < 0`, both of
/// squared "radius" `j/2`.
pub fn embed(params: &KerrParams, r: f64, phi: f64) -> [f64; 3] {
    let j = params.j().value();
    let scale = (j / 2.0).sqrt();
    let arg = (2.0 * params.lambda().abs()).sqrt() * r;
    if params.is_positive() {
        [
            scale * arg.cosh(),
            scale * arg.sinh() * phi.cos(),
            scale * arg.sinh() * phi.sin(),
        ]
    } else {
        [
            scale * arg.cos(),
            scale * arg.sin() * phi.cos(),
            scale * arg.sin() * phi.sin(),
        ]
    }
}

/// `|x0^2 -+ x1^2 -+ x2^2 - j/2|`, the quadric constraint violation of
/// [`embed`] (Minkowski combination for `lambda > 0`, Euclidean otherwise).
pub fn embedding_residual(params: &KerrParams, r: f64, phi: f64) -> f64 {
    let [x0, x1, x2] = embed(params, r, phi);
    let j_half = params.j().value() / 2.0;
    if params.is_positive() {
        (x0 * x0 - x1 * x1 - x2 * x2 - j_half).abs()
    } else {
        (x0 * x0 + x1 * x1 + x2 * x2 - j_half).abs()
    }
}

/// Pullback of the ambient metric (Minkowski `diag(-1, 1, 1)` for the
/// hyperboloid, Euclidean for the sphere) through [`embed`], with
/// central-difference Jacobians.
pub fn pullback_metric(params: &KerrParams, r: f64, phi: f64, h: f64) -> Result<MetricAtPoint> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidParams(format!(
            "step must lie in [1e-7, 1e-3], got {h}"
        )));
    }
    check_r_in_domain(params, r + h)?;
    let d_r: Vec<f64> = {
        let p = embed(params, r + h, phi);
        let m = embed(params, r - h, phi);
        (0..3).map(|k| (p[k] - m[k]) / (2.0 * h)).collect()
    };
    let d_phi: Vec<f64> = {
        let p = embed(params, r, phi + h);
        let m = embed(params, r, phi - h);
        (0..3).map(|k| (p[k] - m[k]) / (2.0 * h)).collect()
    };
    let signature = if params.is_positive() {
        [-1.0, 1.0, 1.0]
    } else {
        [1.0, 1.0, 1.0]
    };
    let contract = |a: &[f64], b: &[f64]| -> f64 {
        (0..3).map(|k| signature[k] * a[k] * b[k]).sum()
    };
    Ok(MetricAtPoint {
        g_rr: contract(&d_r, &d_r),
        g_phiphi: contract(&d_phi, &d_phi),
        g_rphi: contract(&d_r, &d_phi),
        point: PolarAmplitude::new(r, phi)?,
        params: *params,
    })
}

/// Node counts and the radial truncation for the identity/reproducing
/// quadratures.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureConfig {
    pub radial_nodes: usize,
    pub angular_nodes: usize,
    /// Radial truncation (`lambda > 0` only; the compact family integrates
    /// its full domain).
    pub r_max: f64,
    /// Number of leading Fock projectors audited.
    pub projector_count: usize,
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radial_nodes < 8 || self.angular_nodes < 8 {
            return Err(Error::InvalidParams(
                "radial_nodes and angular_nodes must be >= 8".into(),
            ));
        }
        if self.projector_count == 0 {
            return Err(Error::InvalidParams("projector_count must be >= 1".into()));
        }
        if self.angular_nodes < 2 * self.projector_count + 1 {
            return Err(Error::InvalidParams(format!(
                "angular_nodes = {} cannot resolve {} projectors (need >= {})",
                self.angular_nodes,
                self.projector_count,
                2 * self.projector_count + 1
            )));
        }
        if !(self.r_max > 0.0) {
            return Err(Error::InvalidParams("r_max must be > 0".into()));
        }
        Ok(())
    }

    /// Defaults per family: the compact family integrates to its exact
    /// domain endpoint; the hyperbolic family truncates where the analytic
    /// tail of every audited projector falls below `1e-10`.
    pub fn default_for(params: &KerrParams, projector_count: usize) -> Self {
        let projector_count = projector_count.max(1);
        let r_max = if params.is_positive() {
            pos_r_max_for_tail(params, projector_count, 1e-10)
        } else {
            // Exact endpoint: sqrt(|lambda|/2) r = pi/2.
            std::f64::consts::FRAC_PI_2 / params.arg_scale()
        };
        QuadratureConfig {
            radial_nodes: if params.is_positive() { 200 } else { 64 },
            angular_nodes: (2 * projector_count + 1).max(64),
            r_max,
            projector_count,
        }
    }
}

/// Radial truncation making every audited projector's analytic tail smaller
/// than `target`: the tail of projector `n` is bounded by
/// `C(2j+n-1, n) sech^{4j-2}(y_max)`.
fn pos_r_max_for_tail(params: &KerrParams, projector_count: usize, target: f64) -> f64 {
    let twoj = params.j().twice() as f64;
    let n_max = (projector_count - 1) as f64;
    // ln C(2j + n - 1, n) by the log-gamma-free running sum.
    let mut ln_binom = 0.0;
    for k in 0..projector_count - 1 {
        ln_binom += ((twoj + k as f64).ln()) - ((k as f64 + 1.0).ln());
    }
    let exponent = (2.0 * twoj - 2.0).max(2.0);
    let y_max = (ln_binom + (1.0 / target).ln()) / exponent + 2.0 * std::f64::consts::LN_2 + n_max * 0.0;
    (y_max.max(4.0)) / params.arg_scale()
}

/// Binomial-type radial profiles `sqrt(C_m C_n)` for the two families.
fn sqrt_binoms(twoj: f64, count: usize, compact: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut ln_c = 0.0_f64;
    for n in 0..count {
        out.push((0.5 * ln_c).exp());
        let numer = if compact {
            twoj - n as f64
        } else {
            twoj + n as f64
        };
        ln_c += numer.max(f64::MIN_POSITIVE).ln() - (n as f64 + 1.0).ln();
    }
    out
}

fn angular_factors(angular_nodes: usize, max_dm: usize) -> Vec<Complex64> {
    // (1/2pi) sum_l (2pi/L) e^{i dm phi_l} over the uniform grid; exact
    // Kronecker delta for |dm| < L.
    let mut out = Vec::with_capacity(max_dm + 1);
    for dm in 0..=max_dm {
        let mut acc = Complex64::default();
        for l in 0..angular_nodes {
            let phi = 2.0 * std::f64::consts::PI * l as f64 / angular_nodes as f64;
            acc += Complex64::from_polar(1.0, dm as f64 * phi);
        }
        out.push(acc / angular_nodes as f64);
    }
    out
}

fn resolution_residual_once(params: &KerrParams, q: &QuadratureConfig) -> f64 {
    let twoj = params.j().twice() as f64;
    let p_count = q.projector_count;
    let ang = angular_factors(q.angular_nodes, p_count - 1);
    let mut worst = 0.0_f64;
    if params.is_positive() {
        // Substitution u = tanh^2(sqrt(lambda/2) r): the diagonal integrand
        // becomes (2j-1) C_n u^n (1-u)^{2j-2}, polynomial in u.
        let u_max = (params.arg_scale() * q.r_max).tanh().powi(2);
        let (us, ws) = gauss_legendre_on(q.radial_nodes, 0.0, u_max);
        let binoms = sqrt_binoms(twoj, p_count, false);
        for m in 0..p_count {
            for n in 0..p_count {
                let mut radial = 0.0;
                for (&u, &w) in us.iter().zip(&ws) {
                    radial += w * u.powf((m + n) as f64 / 2.0) * (1.0 - u).powf(twoj - 2.0);
                }
                radial *= (twoj - 1.0) * binoms[m] * binoms[n];
                let entry = ang[m.abs_diff(n)] * radial;
                let target = if m == n { 1.0 } else { 0.0 };
                worst = worst.max((entry - target).norm());
            }
        }
    } else {
        // Substitution v = cos(sqrt(2|lambda|) r) over [-1, 1]; radial
        // measure becomes (2j+1)/2 dv and cos/sin powers become polynomials.
        let (vs, ws) = gauss_legendre_on(q.radial_nodes, -1.0, 1.0);
        let binoms = sqrt_binoms(twoj, p_count, true);
        for m in 0..p_count {
            for n in 0..p_count {
                let mut radial = 0.0;
                for (&v, &w) in vs.iter().zip(&ws) {
                    let cos2 = (1.0 + v) / 2.0;
                    let sin2 = (1.0 - v) / 2.0;
                    radial += w
                        * cos2.powf((2.0 * twoj - (m + n) as f64) / 2.0)
                        * sin2.powf((m + n) as f64 / 2.0);
                }
                radial *= (twoj + 1.0) / 2.0 * binoms[m] * binoms[n];
                let entry = ang[m.abs_diff(n)] * radial;
                let target = if m == n { 1.0 } else { 0.0 };
                worst = worst.max((entry - target).norm());
            }
        }
    }
    worst
}

fn check_identity_params(params: &KerrParams) -> Result<()> {
    if params.is_positive() && params.j().twice() < 2 {
        return Err(Error::InvalidParams(
            "hyperbolic-family identity checks need j >= 1 (the invariant measure degenerates at j = 1/2)"
                .into(),
        ));
    }
    Ok(())
}

/// Max deviation of `integral dmu |a><a|` from the identity over the leading
/// `projector_count x projector_count` block.
///
/// The residual is recomputed with doubled radial nodes; if it moves by more
/// than 10% above the numerical floor, quadrature under-resolution is
/// reported instead of a value.
pub fn resolution_residual(params: &KerrParams, q: &QuadratureConfig) -> Result<f64> {
    q.validate()?;
    check_identity_params(params)?;
    let coarse = resolution_residual_once(params, q);
    let mut finer = *q;
    finer.radial_nodes *= 2;
    let fine = resolution_residual_once(params, &finer);
    if coarse.max(fine) > 1e-13 && (coarse - fine).abs() > 0.1 * coarse.max(fine) {
        return Err(Error::QuadratureUnderResolved { coarse, fine });
    }
    Ok(fine)
}

fn reproducing_residual_once(
    a1: &PolarAmplitude,
    a2: &PolarAmplitude,
    params: &KerrParams,
    q: &QuadratureConfig,
) -> Result<f64> {
    let twoj = params.j().twice() as f64;
    let direct = kerr_overlap(a1, a2, params)?;
    let mut integral = Complex64::default();
    let angular: Vec<f64> = (0..q.angular_nodes)
        .map(|l| 2.0 * std::f64::consts::PI * l as f64 / q.angular_nodes as f64)
        .collect();
    let ang_w = 2.0 * std::f64::consts::PI / q.angular_nodes as f64;
    if params.is_positive() {
        let u_max = (params.arg_scale() * q.r_max).tanh().powi(2);
        let (us, ws) = gauss_legendre_on(q.radial_nodes, 0.0, u_max);
        let measure = (twoj - 1.0) / (2.0 * std::f64::consts::PI);
        for (&u, &w) in us.iter().zip(&ws) {
            let r = u.sqrt().atanh() / params.arg_scale();
            let radial_w = w / ((1.0 - u) * (1.0 - u));
            for &phi in &angular {
                let alpha = PolarAmplitude::new(r, phi)?;
                let k1 = kerr_overlap(a1, &alpha, params)?;
                let k2 = kerr_overlap(&alpha, a2, params)?;
                integral += k1 * k2 * (measure * radial_w * ang_w);
            }
        }
    } else {
        let (vs, ws) = gauss_legendre_on(q.radial_nodes, -1.0, 1.0);
        let measure = (twoj + 1.0) / (2.0 * std::f64::consts::PI) / 2.0;
        for (&v, &w) in vs.iter().zip(&ws) {
            let y = 0.5 * v.clamp(-1.0, 1.0).acos();
            let r = y / params.arg_scale();
            for &phi in &angular {
                let alpha = PolarAmplitude::new(r, phi)?;
                let k1 = kerr_overlap(a1, &alpha, params)?;
                let k2 = kerr_overlap(&alpha, a2, params)?;
                integral += k1 * k2 * (measure * w * ang_w);
            }
        }
    }
    Ok((direct - integral).norm())
}

/// `|K(a1, a2) - integral dmu(a) K(a1, a) K(a, a2)|` under the same
/// quadrature and under-resolution policy as [`resolution_residual`].
pub fn reproducing_residual(
    a1: &PolarAmplitude,
    a2: &PolarAmplitude,
    params: &KerrParams,
    q: &QuadratureConfig,
) -> Result<f64> {
    q.validate()?;
    check_identity_params(params)?;
    check_r_in_domain(params, a1.r())?;
    check_r_in_domain(params, a2.r())?;
    let coarse = reproducing_residual_once(a1, a2, params, q)?;
    let mut finer = *q;
    finer.radial_nodes *= 2;
    finer.angular_nodes *= 2;
    let fine = reproducing_residual_once(a1, a2, params, &finer)?;
    if coarse.max(fine) > 1e-12 && (coarse - fine).abs() > 0.1 * coarse.max(fine) {
        return Err(Error::QuadratureUnderResolved { coarse, fine });
    }
    Ok(fine)
}
