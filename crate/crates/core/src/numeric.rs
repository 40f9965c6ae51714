//! Shared numerical routines: Gauss-Legendre quadrature, a symmetric
//! eigenvalue solver, the action of a tridiagonal matrix exponential, and an
//! adaptive Runge-Kutta integrator.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes are found by Newton iteration on the Legendre recurrence; accurate
/// to machine precision for the node counts used here (n <= ~2000).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root (descending order).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (pm1 - x * p) / (1.0 - x * x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&wi| wi * half).collect(),
    )
}

/// All eigenvalues of a real symmetric matrix by cyclic Jacobi rotations,
/// returned in ascending order. Eigenvectors are not accumulated.
pub fn symmetric_eigenvalues(mat: &Array2<f64>) -> Vec<f64> {
    let n = mat.nrows();
    assert_eq!(n, mat.ncols(), "matrix must be square");
    let mut a = mat.clone();
    let frob: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..50 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q] ] * a[[p, q]];
            }
        }
        if (2.0 * off).sqrt() <= 1e-15 * frob {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-18 * frob {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[[p, p]] = app - t * apq;
                a[[q, q]] = aqq + t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[p, k]] = a[[k, p]];
                        a[[k, q]] = s * akp + c * akq;
                        a[[q, k]] = a[[k, q]];
                    }
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

/// A complex tridiagonal matrix stored as three bands.
///
/// `sub[k]` is the entry at `(k+1, k)`, `diag[k]` at `(k, k)` and `sup[k]` at
/// `(k, k+1)`.
#[derive(Debug, Clone)]
pub struct Tridiag {
    pub sub: Vec<Complex64>,
    pub diag: Vec<Complex64>,
    pub sup: Vec<Complex64>,
}

impl Tridiag {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `out = self * x`.
    pub fn matvec(&self, x: &[Complex64], out: &mut [Complex64]) {
        let n = self.dim();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.sup[i] * x[i + 1];
            }
            out[i] = acc;
        }
    }

    fn is_skew_hermitian(&self, tol: f64) -> bool {
        self.diag.iter().all(|d| d.re.abs() <= tol)
            && self
                .sub
                .iter()
                .zip(&self.sup)
                .all(|(a, b)| (*a + b.conj()).norm() <= tol * (1.0 + a.norm()))
    }

    /// Gershgorin bound on the spectral radius.
    fn spectral_bound(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i].norm();
                if i > 0 {
                    s += self.sub[i - 1].norm();
                }
                if i + 1 < n {
                    s += self.sup[i].norm();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    /// Computes `exp(G) v` for a skew-Hermitian tridiagonal `G` by a Chebyshev
    /// expansion of the propagator.
    ///
    /// Writing `G = -iH` with `H` Hermitian and `|spec(H)| <= a`, the
    /// expansion `exp(-iaX) = sum_k (2 - d_k0) (-i)^k J_k(a) T_k(X)` is summed
    /// with the Chebyshev recurrence on `X = H/a`. The series is truncated
    /// once `k` passes the Bessel turnover `a + O(a^{1/3})`, which leaves a
    /// remainder far below double precision.
    pub fn expmv_skew(&self, v: &[Complex64]) -> Vec<Complex64> {
        debug_assert!(self.is_skew_hermitian(1e-12), "generator must be skew-Hermitian");
        assert_eq!(v.len(), self.dim());
        let a = self.spectral_bound();
        if a < 1e-300 {
            return v.to_vec();
        }
        // H = iG, scaled to unit spectral radius.
        let inv = 1.0 / a;
        let i1 = Complex64::new(0.0, 1.0);
        let h = Tridiag {
            sub: self.sub.iter().map(|z| i1 * z * inv).collect(),
            diag: self.diag.iter().map(|z| i1 * z * inv).collect(),
            sup: self.sup.iter().map(|z| i1 * z * inv).collect(),
        };
        let kmax = (a + 12.5 * a.cbrt() + 30.0).ceil() as usize;
        let bessel = bessel_j_array(a, kmax);

        let n = self.dim();
        let mut t_prev = v.to_vec(); // T_0 v
        let mut t_cur = vec![Complex64::default(); n];
        h.matvec(&t_prev, &mut t_cur); // T_1 v
        let mut w: Vec<Complex64> = t_prev.iter().map(|z| z * bessel[0]).collect();
        // (-i)^k cycles with period 4.
        let phases = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 1.0),
        ];
        let mut scratch = vec![Complex64::default(); n];
        for k in 1..=kmax {
            let c = 2.0 * bessel[k] * phases[k % 4];
            for i in 0..n {
                w[i] += c * t_cur[i];
            }
            if k < kmax {
                h.matvec(&t_cur, &mut scratch);
                for i in 0..n {
                    scratch[i] = 2.0 * scratch[i] - t_prev[i];
                }
                std::mem::swap(&mut t_prev, &mut t_cur);
                std::mem::swap(&mut t_cur, &mut scratch);
            }
        }
        w
    }
}

/// `J_k(x)` for `k = 0..=kmax` by Miller's backward recurrence.
fn bessel_j_array(x: f64, kmax: usize) -> Vec<f64> {
    assert!(x >= 0.0);
    if x < 1e-300 {
        let mut out = vec![0.0; kmax + 1];
        out[0] = 1.0;
        return out;
    }
    // Start far enough above both the order and the turnover point that the
    // seed value has fully washed out.
    let start = kmax.max(x.ceil() as usize) + 10 * (x.cbrt().ceil() as usize).max(2) + 40;
    let mut out = vec![0.0; kmax + 1];
    let mut jp1 = 0.0_f64;
    let mut j = 1e-300_f64;
    let mut norm = 0.0_f64; // accumulates J_0 + 2 * sum_{m>=1} J_2m
    for k in (0..=start).rev() {
        let jm1 = (2.0 * (k as f64 + 1.0) / x) * j - jp1;
        jp1 = j;
        j = jm1;
        if k <= kmax {
            out[k] = j;
        }
        if k % 2 == 0 {
            norm += if k == 0 { j } else { 2.0 * j };
        }
        if j.abs() > 1e250 {
            let scale = 1e-250;
            j *= scale;
            jp1 *= scale;
            norm *= scale;
            for v in out.iter_mut() {
                *v *= scale;
            }
        }
    }
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// Dormand-Prince 5(4) coefficients.
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` with an adaptive
/// Dormand-Prince 5(4) scheme and returns `y(t1)`.
pub fn integrate_rk45<F>(
    f: F,
    y0: &[Complex64],
    t0: f64,
    t1: f64,
    rtol: f64,
    atol: f64,
) -> Result<Vec<Complex64>>
where
    F: Fn(f64, &[Complex64], &mut [Complex64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if (t1 - t0).abs() == 0.0 {
        return Ok(y);
    }
    let dir = (t1 - t0).signum();
    let mut t = t0;
    let mut k: Vec<Vec<Complex64>> = vec![vec![Complex64::default(); n]; 7];
    let mut ytmp = vec![Complex64::default(); n];

    // Initial step from the magnitude of the first derivative.
    f(t, &y, &mut k[0]);
    let d0: f64 = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-12);
    let d1: f64 = k[0].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-12);
    let mut h = dir * (0.01 * d0 / d1).min((t1 - t0).abs());

    let mut steps = 0usize;
    const MAX_STEPS: usize = 50_000_000;
    while dir * (t1 - t) > 0.0 {
        if dir * (t + h) > dir * t1 {
            h = t1 - t;
        }
        f(t, &y, &mut k[0]);
        for stage in 0..6 {
            for i in 0..n {
                let mut acc = Complex64::default();
                for (s, a) in DP_A[stage].iter().enumerate().take(stage + 1) {
                    acc += k[s][i] * *a;
                }
                ytmp[i] = y[i] + acc * h;
            }
            f(t + h * DP_A[stage].iter().take(stage + 1).sum::<f64>().min(1.0), &ytmp, &mut k[stage + 1]);
        }
        // 5th-order solution and embedded error estimate.
        let mut err = 0.0_f64;
        for i in 0..n {
            let mut y5 = Complex64::default();
            let mut y4 = Complex64::default();
            for s in 0..7 {
                y5 += k[s][i] * DP_B5[s];
                y4 += k[s][i] * DP_B4[s];
            }
            let y5 = y[i] + y5 * h;
            let y4 = y[i] + y4 * h;
            let sc = atol + rtol * y5.norm().max(y[i].norm());
            let e = (y5 - y4).norm() / sc;
            err = err.max(e);
            ytmp[i] = y5;
        }
        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&ytmp);
        }
        let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        h *= fac;
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::NotConverged {
                what: "rk45 step budget exhausted".into(),
                iterations: steps,
            });
        }
    }
    Ok(y)
}

/// FNV-1a over a sequence of u64 words; used to derive per-task RNG streams.
pub fn fnv1a64(parts: &[u64]) -> u64 {
    let mut h = 0xcbf29ce484222325_u64;
    for p in parts {
        for byte in p.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n-point rule is exact through degree 2n-1.
        let (x, w) = gauss_legendre(8);
        for deg in 0..16 {
            let num: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg)).sum();
            let exact = if deg % 2 == 0 {
                2.0 / (deg as f64 + 1.0)
            } else {
                0.0
            };
            assert_abs_diff_eq!(num, exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn gauss_legendre_mapped_interval() {
        let (x, w) = gauss_legendre_on(16, 0.0, 2.0);
        let integral: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.exp()).sum();
        assert_abs_diff_eq!(integral, 2.0_f64.exp() - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let m = ndarray::arr2(&[[2.0, 1.0], [1.0, 2.0]]);
        let e = symmetric_eigenvalues(&m);
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_tridiagonal_toeplitz() {
        // Eigenvalues of the n x n (0,1,0) Toeplitz matrix are 2cos(k pi/(n+1)).
        let n = 12;
        let mut m = Array2::zeros((n, n));
        for i in 0..n - 1 {
            m[[i, i + 1]] = 1.0;
            m[[i + 1, i]] = 1.0;
        }
        let e = symmetric_eigenvalues(&m);
        let mut expected: Vec<f64> = (1..=n)
            .map(|k| 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos())
            .collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in e.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn bessel_array_small_arguments() {
        // Reference values of J_k(1).
        let j = bessel_j_array(1.0, 4);
        assert_abs_diff_eq!(j[0], 0.7651976865579666, epsilon = 1e-14);
        assert_abs_diff_eq!(j[1], 0.44005058574493355, epsilon = 1e-14);
        assert_abs_diff_eq!(j[2], 0.11490348493190048, epsilon = 1e-14);
        assert_abs_diff_eq!(j[3], 0.019563353982668407, epsilon = 1e-14);
    }

    #[test]
    fn bessel_array_large_argument_normalization() {
        let j = bessel_j_array(2000.0, 2100);
        // Reference values computed with 30-digit arithmetic.
        assert_abs_diff_eq!(j[0], 0.0070983418331996168, epsilon = 1e-12);
        assert_abs_diff_eq!(j[1], 0.0163701415228542167, epsilon = 1e-12);
        assert_abs_diff_eq!(j[2], -0.0070819716916767625, epsilon = 1e-12);
        let total: f64 = j[0] * j[0] + 2.0 * j[1..].iter().map(|v| v * v).sum::<f64>();
        // sum J_k^2 = 1 needs orders beyond kmax; with kmax > turnover it holds tightly.
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn expmv_2x2_rotation() {
        // G = [[0, w],[-w, 0]] rotates (1,0) to (cos w, -sin w).
        let w = 0.7;
        let g = Tridiag {
            sub: vec![Complex64::new(-w, 0.0)],
            diag: vec![Complex64::default(); 2],
            sup: vec![Complex64::new(w, 0.0)],
        };
        let v = vec![Complex64::new(1.0, 0.0), Complex64::default()];
        let out = g.expmv_skew(&v);
        assert_abs_diff_eq!(out[0].re, w.cos(), epsilon = 1e-13);
        assert_abs_diff_eq!(out[1].re, -w.sin(), epsilon = 1e-13);
    }

    #[test]
    fn expmv_preserves_norm_and_inverts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 60;
        let sup: Vec<Complex64> = (0..n - 1)
            .map(|_| Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
            .collect();
        let sub: Vec<Complex64> = sup.iter().map(|z| -z.conj()).collect();
        let diag: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(0.0, rng.gen_range(-2.0..2.0)))
            .collect();
        let g = Tridiag { sub, diag, sup };
        let v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let nv: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let w = g.expmv_skew(&v);
        let nw: f64 = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert_abs_diff_eq!(nw, nv, epsilon = 1e-11);
        // exp(-G) exp(G) v = v
        let neg = Tridiag {
            sub: g.sub.iter().map(|z| -z).collect(),
            diag: g.diag.iter().map(|z| -z).collect(),
            sup: g.sup.iter().map(|z| -z).collect(),
        };
        let back = neg.expmv_skew(&w);
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).norm() < 1e-11);
        }
    }

    #[test]
    fn expmv_matches_taylor_reference() {
        // Small-norm case checked against a direct Taylor sum.
        let n = 8;
        let sup: Vec<Complex64> = (0..n - 1)
            .map(|k| Complex64::new(0.3 * (k as f64 + 1.0), 0.1))
            .collect();
        let sub: Vec<Complex64> = sup.iter().map(|z| -z.conj()).collect();
        let g = Tridiag {
            sub,
            diag: vec![Complex64::default(); n],
            sup: sup.clone(),
        };
        let mut v = vec![Complex64::default(); n];
        v[0] = Complex64::new(1.0, 0.0);
        let fast = g.expmv_skew(&v);
        // Taylor: w = sum G^k v / k!
        let mut term = v.clone();
        let mut slow = v.clone();
        let mut scratch = vec![Complex64::default(); n];
        for k in 1..60 {
            g.matvec(&term, &mut scratch);
            for i in 0..n {
                term[i] = scratch[i] / k as f64;
                slow[i] += term[i];
            }
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn rk45_harmonic_oscillator() {
        // y'' = -y as a 2-component complex system; y(0)=1, y'(0)=0.
        let f = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let y0 = vec![Complex64::new(1.0, 0.0), Complex64::default()];
        let t1 = 3.0;
        let y = integrate_rk45(f, &y0, 0.0, t1, 1e-11, 1e-12).unwrap();
        assert_abs_diff_eq!(y[0].re, t1.cos(), epsilon = 1e-9);
        assert_abs_diff_eq!(y[1].re, -t1.sin(), epsilon = 1e-9);
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(&[1, 2, 3]), fnv1a64(&[1, 2, 3]));
        assert_ne!(fnv1a64(&[1, 2, 3]), fnv1a64(&[1, 2, 4]));
    }
}
