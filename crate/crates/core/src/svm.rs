//! Soft-margin kernel SVMs on precomputed Gram matrices: a sequential
//! minimal optimization solver, a small brute-force QP used as its oracle,
//! prediction, classification metrics, and hyperparameter grid search under
//! the two benchmark scenarios.
//!
//! Labels are `{0, 1}` externally and `{-1, +1}` internally; the decision
//! function is `f(x) = sum_i alpha_i y_i K(x, x_i) + b` with label
//! `1 <=> f(x) >= 0`.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, NoisePlan, ScalingMode, ScalingOptions, ScalingRecord, SplitPlan};
use crate::error::{Error, Result};
use crate::kernels::{cross_gram, gram_with_noise, GramMatrix, KernelFamily, KernelSpec, Realify};
use crate::numeric::fnv1a64;

/// A trained soft-margin SVM over a precomputed Gram.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvmModel {
    /// `alpha_i y_i`; zero for non-support vectors.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub support_idx: Vec<usize>,
    pub c_reg: f64,
    pub spec: KernelSpec,
    /// Fingerprint of the training dataset (0 when trained on a bare Gram).
    pub train_ref: u64,
    /// Diagonal shift applied before training to repair slight
    /// indefiniteness; 0 when none was needed.
    pub diag_shift: f64,
}

impl SvmModel {
    /// `alpha_i >= 0` recovered from the signed dual coefficients.
    pub fn alphas(&self) -> Vec<f64> {
        self.dual_coefs.iter().map(|v| v.abs()).collect()
    }
}

/// Classification quality on one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1: f64,
    pub accuracy: f64,
    /// `confusion[actual][predicted]` over labels `{0, 1}`.
    pub confusion: [[usize; 2]; 2],
    pub split_tag: SplitTag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Test,
    CrossVal,
}

/// `F1 = 2 TP / (2 TP + FP + FN)` for the positive class; defined as 0 when
/// the denominator vanishes.
pub fn f1_score(confusion: &[[usize; 2]; 2]) -> f64 {
    let tp = confusion[1][1] as f64;
    let fp = confusion[0][1] as f64;
    let fn_ = confusion[1][0] as f64;
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

pub fn accuracy(confusion: &[[usize; 2]; 2]) -> f64 {
    let correct = (confusion[0][0] + confusion[1][1]) as f64;
    let total: usize = confusion.iter().flatten().sum();
    correct / total as f64
}

/// Builds an [`EvalReport`] from aligned true/predicted label slices.
pub fn evaluate(y_true: &[u8], y_pred: &[u8], split_tag: SplitTag) -> EvalReport {
    debug_assert_eq!(y_true.len(), y_pred.len());
    let mut confusion = [[0usize; 2]; 2];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t as usize][p as usize] += 1;
    }
    EvalReport {
        f1: f1_score(&confusion),
        accuracy: accuracy(&confusion),
        confusion,
        split_tag,
    }
}

fn to_signed(labels: &[u8]) -> Result<Vec<f64>> {
    let mut any = [false; 2];
    let y: Vec<f64> = labels
        .iter()
        .map(|&l| {
            any[(l != 0) as usize] = true;
            if l == 0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    if !(any[0] && any[1]) {
        return Err(Error::InvalidParams("training labels must contain both classes".into()));
    }
    Ok(y)
}

fn check_symmetric(k: &Array2<f64>) -> Result<()> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: k.ncols(),
        });
    }
    for i in 0..n {
        for jj in (i + 1)..n {
            if (k[[i, jj]] - k[[jj, i]]).abs() > 1e-12 {
                return Err(Error::InvalidParams(format!(
                    "gram not symmetric at ({i}, {jj})"
                )));
            }
        }
    }
    Ok(())
}

/// Diagonal repair for slightly indefinite Grams: shift by `|min eig|` when
/// the audited minimum lies in `[-1e-8 n, 0)`.
fn diag_shift_for(gram: &GramMatrix) -> f64 {
    match gram.min_eigenvalue {
        Some(m) if m < 0.0 && m >= -crate::kernels::PSD_FLOOR_PER_N * gram.n() as f64 => -m,
        _ => 0.0,
    }
}

/// Trains by sequential minimal optimization with max-violating-pair
/// selection and a seeded random fallback for degenerate pairs.
///
/// Stops when the KKT violation gap falls below `tol`; exceeding `max_iters`
/// pair updates yields [`Error::SvmNotConverged`] carrying the best iterate.
pub fn train_svm(
    gram: &GramMatrix,
    labels: &[u8],
    c_reg: f64,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<SvmModel> {
    if !(c_reg > 0.0) {
        return Err(Error::InvalidParams(format!("c_reg must be > 0, got {c_reg}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tol must be > 0, got {tol}")));
    }
    check_symmetric(&gram.values)?;
    let n = gram.n();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let y = to_signed(labels)?;
    let shift = diag_shift_for(gram);
    let k = |i: usize, jj: usize| -> f64 {
        gram.values[[i, jj]] + if i == jj { shift } else { 0.0 }
    };

    let mut alpha = vec![0.0_f64; n];
    let mut grad = vec![-1.0_f64; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut converged = false;
    let mut iters = 0usize;

    let in_up = |y_i: f64, a: f64| (y_i > 0.0 && a < c_reg) || (y_i < 0.0 && a > 0.0);
    let in_low = |y_i: f64, a: f64| (y_i > 0.0 && a > 0.0) || (y_i < 0.0 && a < c_reg);

    while iters < max_iters {
        iters += 1;
        // Max-violating pair.
        let mut i_sel = usize::MAX;
        let mut m_val = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut big_m = f64::INFINITY;
        for idx in 0..n {
            let v = -y[idx] * grad[idx];
            if in_up(y[idx], alpha[idx]) && v > m_val {
                m_val = v;
                i_sel = idx;
            }
            if in_low(y[idx], alpha[idx]) && v < big_m {
                big_m = v;
                j_sel = idx;
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || m_val - big_m < tol {
            converged = i_sel == usize::MAX || j_sel == usize::MAX || m_val - big_m < tol;
            break;
        }
        let mut jj = j_sel;
        let mut quad = k(i_sel, i_sel) + k(jj, jj) - 2.0 * k(i_sel, jj);
        if quad <= 1e-12 {
            // Seeded fallback: try random admissible partners.
            let mut found = false;
            for _ in 0..2 * n {
                let cand = rng.gen_range(0..n);
                if cand != i_sel && in_low(y[cand], alpha[cand]) {
                    let q = k(i_sel, i_sel) + k(cand, cand) - 2.0 * k(i_sel, cand);
                    if q > 1e-12 {
                        jj = cand;
                        quad = q;
                        found = true;
                        break;
                    }
                }
            }
            if !found {
                quad = 1e-12;
            }
        }
        // Step along alpha_i += y_i t, alpha_j -= y_j t.
        let gap = -y[i_sel] * grad[i_sel] + y[jj] * grad[jj];
        let mut t = gap / quad;
        let hi_i = if y[i_sel] > 0.0 {
            c_reg - alpha[i_sel]
        } else {
            alpha[i_sel]
        };
        let hi_j = if y[jj] > 0.0 { alpha[jj] } else { c_reg - alpha[jj] };
        t = t.min(hi_i).min(hi_j);
        if t <= 0.0 {
            continue;
        }
        let d_i = y[i_sel] * t;
        let d_j = -y[jj] * t;
        alpha[i_sel] = (alpha[i_sel] + d_i).clamp(0.0, c_reg);
        alpha[jj] = (alpha[jj] + d_j).clamp(0.0, c_reg);
        for idx in 0..n {
            grad[idx] += y[idx] * y[i_sel] * k(idx, i_sel) * d_i + y[idx] * y[jj] * k(idx, jj) * d_j;
        }
    }

    let model = finish_model(gram, &y, &alpha, &grad, c_reg, shift);
    if converged {
        Ok(model)
    } else {
        Err(Error::SvmNotConverged { model: Box::new(model) })
    }
}

fn finish_model(
    gram: &GramMatrix,
    y: &[f64],
    alpha: &[f64],
    grad: &[f64],
    c_reg: f64,
    shift: f64,
) -> SvmModel {
    let n = y.len();
    let sv_floor = 1e-12 * c_reg.max(1.0);
    let support_idx: Vec<usize> = (0..n).filter(|&i| alpha[i] > sv_floor).collect();
    // Bias from free support vectors; midpoint of the violation band
    // otherwise.
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for i in 0..n {
        if alpha[i] > sv_floor && alpha[i] < c_reg - sv_floor {
            free_sum += -y[i] * grad[i];
            free_count += 1;
        }
    }
    let bias = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        let mut m_val = f64::NEG_INFINITY;
        let mut big_m = f64::INFINITY;
        for i in 0..n {
            let v = -y[i] * grad[i];
            let up = (y[i] > 0.0 && alpha[i] < c_reg) || (y[i] < 0.0 && alpha[i] > 0.0);
            let low = (y[i] > 0.0 && alpha[i] > 0.0) || (y[i] < 0.0 && alpha[i] < c_reg);
            if up {
                m_val = m_val.max(v);
            }
            if low {
                big_m = big_m.min(v);
            }
        }
        (m_val + big_m) / 2.0
    };
    let dual_coefs: Vec<f64> = (0..n)
        .map(|i| if alpha[i] > sv_floor { alpha[i] * y[i] } else { 0.0 })
        .collect();
    SvmModel {
        dual_coefs,
        bias,
        support_idx,
        c_reg,
        spec: gram.spec.clone(),
        train_ref: 0,
        diag_shift: shift,
    }
}

/// Dual objective `sum alpha - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij`.
pub fn dual_objective(gram: &GramMatrix, model: &SvmModel) -> f64 {
    let n = gram.n();
    let mut linear = 0.0;
    let mut quadratic = 0.0;
    for i in 0..n {
        linear += model.dual_coefs[i].abs();
        for jj in 0..n {
            let kij = gram.values[[i, jj]] + if i == jj { model.diag_shift } else { 0.0 };
            quadratic += model.dual_coefs[i] * model.dual_coefs[jj] * kij;
        }
    }
    linear - 0.5 * quadratic
}

/// Primal objective `1/2 |w|^2 + C sum hinge(y_i f(x_i))` reconstructed from
/// the dual solution; the duality gap `primal - dual` vanishes at optimum.
pub fn primal_objective(gram: &GramMatrix, labels: &[u8], model: &SvmModel) -> f64 {
    let n = gram.n();
    let mut w2 = 0.0;
    for i in 0..n {
        for jj in 0..n {
            let kij = gram.values[[i, jj]] + if i == jj { model.diag_shift } else { 0.0 };
            w2 += model.dual_coefs[i] * model.dual_coefs[jj] * kij;
        }
    }
    let mut hinge = 0.0;
    for i in 0..n {
        let mut f = model.bias;
        for jj in 0..n {
            let kij = gram.values[[i, jj]] + if i == jj { model.diag_shift } else { 0.0 };
            f += model.dual_coefs[jj] * kij;
        }
        let y = if labels[i] == 0 { -1.0 } else { 1.0 };
        hinge += (1.0 - y * f).max(0.0);
    }
    0.5 * w2 + model.c_reg * hinge
}

/// Solves the same dual by projected gradient with momentum, to tight
/// tolerance. Used only as a verification oracle; guarded to `n <= 16`.
pub fn brute_force_qp(gram: &GramMatrix, labels: &[u8], c_reg: f64) -> Result<SvmModel> {
    let n = gram.n();
    if n > 16 {
        return Err(Error::InvalidParams(format!(
            "brute_force_qp is guarded to n <= 16, got {n}"
        )));
    }
    if !(c_reg > 0.0) {
        return Err(Error::InvalidParams(format!("c_reg must be > 0, got {c_reg}")));
    }
    check_symmetric(&gram.values)?;
    let y = to_signed(labels)?;
    let shift = diag_shift_for(gram);
    let q = {
        let mut q = Array2::zeros((n, n));
        for i in 0..n {
            for jj in 0..n {
                q[[i, jj]] =
                    y[i] * y[jj] * (gram.values[[i, jj]] + if i == jj { shift } else { 0.0 });
            }
        }
        q
    };
    // Lipschitz bound by the largest absolute row sum.
    let lip = (0..n)
        .map(|i| (0..n).map(|jj| q[[i, jj]].abs()).sum::<f64>())
        .fold(1e-12, f64::max);
    let step = 1.0 / lip;

    let project = |v: &[f64]| -> Vec<f64> {
        // Bisection on the hyperplane multiplier theta so that
        // y . clip(v - theta y) = 0.
        let bound = v.iter().fold(0.0_f64, |a, &b| a.max(b.abs())) + c_reg + 1.0;
        let h = |theta: f64| -> f64 {
            v.iter()
                .zip(&y)
                .map(|(&vi, &yi)| yi * (vi - theta * yi).clamp(0.0, c_reg))
                .sum()
        };
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = 0.5 * (lo + hi);
        v.iter()
            .zip(&y)
            .map(|(&vi, &yi)| (vi - theta * yi).clamp(0.0, c_reg))
            .collect()
    };

    let grad_at = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..n).map(|jj| q[[i, jj]] * a[jj]).sum::<f64>() - 1.0)
            .collect()
    };

    let mut x = vec![0.0_f64; n];
    let mut z = x.clone();
    let mut momentum = 1.0_f64;
    let mut best_residual = f64::INFINITY;
    for _ in 0..500_000 {
        let g = grad_at(&z);
        let candidate: Vec<f64> = z.iter().zip(&g).map(|(&zi, &gi)| zi - step * gi).collect();
        let x_next = project(&candidate);
        let residual: f64 = x_next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        z = x_next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        momentum = next_momentum;
        x = x_next;
        if residual < best_residual {
            best_residual = residual;
        } else if residual > 10.0 * best_residual {
            // Adaptive restart when momentum overshoots.
            z = x.clone();
            momentum = 1.0;
        }
        if residual < 1e-14 {
            break;
        }
    }
    let grad = grad_at(&x);
    Ok(finish_model(gram, &y, &x, &grad, c_reg, shift))
}

/// Decision values and labels for new points given their kernel values
/// against the training set (`cross[(i, j)] = K(new_i, train_j)`).
pub fn predict(model: &SvmModel, cross: ArrayView2<'_, f64>) -> Result<(Vec<u8>, Vec<f64>)> {
    if cross.ncols() != model.dual_coefs.len() {
        return Err(Error::DimensionMismatch {
            expected: model.dual_coefs.len(),
            got: cross.ncols(),
        });
    }
    let mut labels = Vec::with_capacity(cross.nrows());
    let mut decisions = Vec::with_capacity(cross.nrows());
    for row in cross.rows() {
        let f: f64 = row
            .iter()
            .zip(&model.dual_coefs)
            .map(|(k, c)| k * c)
            .sum::<f64>()
            + model.bias;
        decisions.push(f);
        labels.push(u8::from(f >= 0.0));
    }
    Ok((labels, decisions))
}

/// Which of the two benchmark objectives drives model selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Maximize test-split F1 directly (deliberately overfit-prone).
    TestDriven,
    /// Maximize mean k-fold cross-validation F1 on the training split.
    CrossValDriven,
}

/// Search-wide settings for [`grid_search`].
#[derive(Clone, Debug)]
pub struct GridSearchConfig {
    pub c_regs: Vec<f64>,
    pub scenario: Scenario,
    pub seed: u64,
    pub smo_tol: f64,
    pub max_iters: usize,
    pub noise: Option<NoisePlan>,
}

impl GridSearchConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        Self {
            c_regs: vec![0.1, 1.0, 10.0, 100.0],
            scenario,
            seed,
            smo_tol: 1e-6,
            max_iters: 4_000_000,
            noise: None,
        }
    }
}

/// One evaluated grid cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceEntry {
    pub spec: KernelSpec,
    pub c_reg: f64,
    pub cv_f1: Option<f64>,
    pub test_f1: f64,
    pub train_f1: f64,
}

/// A grid cell skipped because of a kernel domain violation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkippedCell {
    pub spec: KernelSpec,
    pub c_reg: f64,
    pub reason: String,
}

/// Best spec/regularization with its scores and the full evaluation trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_spec: KernelSpec,
    pub best_c_reg: f64,
    pub scenario: Scenario,
    pub cv: Option<EvalReport>,
    pub test: EvalReport,
    pub train: EvalReport,
    pub trace: Vec<TraceEntry>,
    pub skipped: Vec<SkippedCell>,
}

/// Default feature scaling per kernel family: phases into an arc, moduli
/// into a box, z-scores for the radial basis kernel, and raw features for
/// the periodic kernels whose own hyperparameters carry the scale.
pub fn family_scaling(family: &KernelFamily) -> (ScalingMode, ScalingOptions) {
    let opts = ScalingOptions::default();
    match family {
        KernelFamily::KerrPhasePos { .. }
        | KernelFamily::KerrPhaseNeg { .. }
        | KernelFamily::SqueezedPhase { .. } => (ScalingMode::PhasePeriodic, opts),
        KernelFamily::KerrAmpPos { .. }
        | KernelFamily::KerrAmpNeg { .. }
        | KernelFamily::SqueezedAmp {} => (ScalingMode::AmplitudeBox, opts),
        KernelFamily::Rbf { .. } => (ScalingMode::ZScore, opts),
        KernelFamily::Ess { .. } | KernelFamily::Qec { .. } => (ScalingMode::None, opts),
    }
}

fn tie_break_keys(spec: &KernelSpec) -> (f64, f64) {
    match spec.family {
        KernelFamily::KerrPhasePos { lambda, j, .. }
        | KernelFamily::KerrPhaseNeg { lambda, j, .. }
        | KernelFamily::KerrAmpPos { lambda, j }
        | KernelFamily::KerrAmpNeg { lambda, j }
        | KernelFamily::Qec { lambda, j, .. } => (j.value(), lambda.abs()),
        _ => (0.0, 0.0),
    }
}

struct CellScore {
    spec_idx: usize,
    c_idx: usize,
    objective: f64,
    entry: TraceEntry,
}

/// Exhaustive search over `specs x c_regs`.
///
/// Per spec, features are rescaled with the family default fitted on the
/// training rows, one training Gram and one test-by-train cross matrix are
/// computed, and every `c_reg` is trained on them. Cells run in parallel;
/// per-cell RNG streams derive from `(seed, spec, c_reg)` so results do not
/// depend on scheduling. Ties are broken toward the smallest `j`, then
/// smallest `|lambda|`, then smallest `c_reg`.
pub fn grid_search(
    dataset: &Dataset,
    plan: &SplitPlan,
    specs: &[KernelSpec],
    cfg: &GridSearchConfig,
) -> Result<GridSearchResult> {
    if specs.is_empty() || cfg.c_regs.is_empty() {
        return Err(Error::InvalidParams("empty grid".into()));
    }
    dataset.validate()?;
    let dataset = match &cfg.noise {
        Some(noise_plan) => noise_plan.apply_raw(dataset),
        None => dataset.clone(),
    };
    let encoding_noise = cfg.noise.as_ref().and_then(|p| p.encoding());

    let take_rows = |idx: &[usize]| -> Array2<f64> {
        let mut out = Array2::zeros((idx.len(), dataset.d()));
        for (row, &i) in idx.iter().enumerate() {
            out.row_mut(row).assign(&dataset.features.row(i));
        }
        out
    };
    let take_labels =
        |idx: &[usize]| -> Vec<u8> { idx.iter().map(|&i| dataset.labels[i]).collect() };

    let train_raw = take_rows(&plan.train_idx);
    let test_raw = take_rows(&plan.test_idx);
    let y_train = take_labels(&plan.train_idx);
    let y_test = take_labels(&plan.test_idx);

    // Dataset position of each training index, for CV fold sub-indexing.
    let mut pos_in_train = vec![usize::MAX; dataset.n()];
    for (pos, &i) in plan.train_idx.iter().enumerate() {
        pos_in_train[i] = pos;
    }
    let folds: Option<Vec<(Vec<usize>, Vec<usize>)>> = match cfg.scenario {
        Scenario::CrossValDriven => {
            let folds = plan.cv_folds.as_ref().ok_or_else(|| {
                Error::InvalidParams("cross-validation scenario requires cv folds in the split plan".into())
            })?;
            Some(
                folds
                    .iter()
                    .map(|(fit, val)| {
                        (
                            fit.iter().map(|&i| pos_in_train[i]).collect(),
                            val.iter().map(|&i| pos_in_train[i]).collect(),
                        )
                    })
                    .collect(),
            )
        }
        Scenario::TestDriven => None,
    };

    let per_spec: Vec<(Vec<CellScore>, Vec<SkippedCell>)> = specs
        .par_iter()
        .enumerate()
        .map(|(spec_idx, spec)| -> Result<(Vec<CellScore>, Vec<SkippedCell>)> {
            let mut cells = Vec::new();
            let mut skipped = Vec::new();
            if let Err(e) = spec.validate() {
                for (c_idx, &c_reg) in cfg.c_regs.iter().enumerate() {
                    let _ = c_idx;
                    skipped.push(SkippedCell {
                        spec: spec.clone(),
                        c_reg,
                        reason: e.to_string(),
                    });
                }
                return Ok((cells, skipped));
            }
            let (mode, opts) = family_scaling(&spec.family);
            let record = ScalingRecord::fit(train_raw.view(), mode, &opts)?;
            let train_scaled = record.apply(train_raw.view())?;
            let test_scaled = record.apply(test_raw.view())?;
            let train_gram = match gram_with_noise(train_scaled.view(), spec, encoding_noise.as_ref()) {
                Ok(g) => g,
                Err(e) => {
                    for &c_reg in &cfg.c_regs {
                        skipped.push(SkippedCell {
                            spec: spec.clone(),
                            c_reg,
                            reason: e.to_string(),
                        });
                    }
                    return Ok((cells, skipped));
                }
            };
            let test_cross = cross_gram(
                test_scaled.view(),
                train_scaled.view(),
                spec,
                encoding_noise.as_ref(),
            )?;

            for (c_idx, &c_reg) in cfg.c_regs.iter().enumerate() {
                let cell_seed = fnv1a64(&[cfg.seed, spec_idx as u64, c_idx as u64]);
                let cv_f1 = match &folds {
                    None => None,
                    Some(folds) => {
                        let mut scores = Vec::with_capacity(folds.len());
                        for (fit, val) in folds {
                            let sub = subset_gram(&train_gram, fit);
                            let sub_labels: Vec<u8> = fit.iter().map(|&p| y_train[p]).collect();
                            let model = match train_svm(
                                &sub,
                                &sub_labels,
                                c_reg,
                                cfg.smo_tol,
                                cfg.max_iters,
                                cell_seed,
                            ) {
                                Ok(m) => m,
                                Err(Error::SvmNotConverged { model }) => *model,
                                Err(e) => return Err(e),
                            };
                            let cross = cross_from_gram(&train_gram, val, fit);
                            let (pred, _) = predict(&model, cross.view())?;
                            let truth: Vec<u8> = val.iter().map(|&p| y_train[p]).collect();
                            scores.push(evaluate(&truth, &pred, SplitTag::CrossVal).f1);
                        }
                        Some(scores.iter().sum::<f64>() / scores.len() as f64)
                    }
                };
                let model = match train_svm(
                    &train_gram,
                    &y_train,
                    c_reg,
                    cfg.smo_tol,
                    cfg.max_iters,
                    cell_seed,
                ) {
                    Ok(m) => m,
                    Err(Error::SvmNotConverged { model }) => *model,
                    Err(e) => return Err(e),
                };
                let (pred_test, _) = predict(&model, test_cross.view())?;
                let (pred_train, _) = predict(&model, train_gram.values.view())?;
                let test_f1 = evaluate(&y_test, &pred_test, SplitTag::Test).f1;
                let train_f1 = evaluate(&y_train, &pred_train, SplitTag::Train).f1;
                let objective = match cfg.scenario {
                    Scenario::TestDriven => test_f1,
                    Scenario::CrossValDriven => cv_f1.unwrap_or(0.0),
                };
                cells.push(CellScore {
                    spec_idx,
                    c_idx,
                    objective,
                    entry: TraceEntry {
                        spec: spec.clone(),
                        c_reg,
                        cv_f1,
                        test_f1,
                        train_f1,
                    },
                });
            }
            Ok((cells, skipped))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trace = Vec::new();
    let mut skipped = Vec::new();
    let mut cells = Vec::new();
    for (cell_vec, skip_vec) in per_spec {
        for c in cell_vec {
            trace.push(c.entry.clone());
            cells.push(c);
        }
        skipped.extend(skip_vec);
    }
    if cells.is_empty() {
        return Err(Error::InvalidParams(
            "every grid cell was skipped; no model trained".into(),
        ));
    }

    // Highest objective; ties toward smallest j, |lambda|, c_reg, then
    // enumeration order.
    let best = cells
        .iter()
        .min_by(|a, b| {
            let (ja, la) = tie_break_keys(&a.entry.spec);
            let (jb, lb) = tie_break_keys(&b.entry.spec);
            (-a.objective, ja, la, a.entry.c_reg, a.spec_idx, a.c_idx)
                .partial_cmp(&(-b.objective, jb, lb, b.entry.c_reg, b.spec_idx, b.c_idx))
                .unwrap()
        })
        .unwrap();

    // Re-evaluate the winning cell to produce full reports.
    let spec = best.entry.spec.clone();
    let c_reg = best.entry.c_reg;
    let (mode, opts) = family_scaling(&spec.family);
    let record = ScalingRecord::fit(train_raw.view(), mode, &opts)?;
    let train_scaled = record.apply(train_raw.view())?;
    let test_scaled = record.apply(test_raw.view())?;
    let train_gram = gram_with_noise(train_scaled.view(), &spec, encoding_noise.as_ref())?;
    let test_cross = cross_gram(
        test_scaled.view(),
        train_scaled.view(),
        &spec,
        encoding_noise.as_ref(),
    )?;
    let cell_seed = fnv1a64(&[cfg.seed, best.spec_idx as u64, best.c_idx as u64]);
    let mut model = match train_svm(&train_gram, &y_train, c_reg, cfg.smo_tol, cfg.max_iters, cell_seed)
    {
        Ok(m) => m,
        Err(Error::SvmNotConverged { model }) => *model,
        Err(e) => return Err(e),
    };
    model.train_ref = dataset.fingerprint();
    let (pred_test, _) = predict(&model, test_cross.view())?;
    let (pred_train, _) = predict(&model, train_gram.values.view())?;
    let cv = best.entry.cv_f1.map(|f1| EvalReport {
        f1,
        accuracy: f64::NAN,
        confusion: [[0; 2]; 2],
        split_tag: SplitTag::CrossVal,
    });
    Ok(GridSearchResult {
        best_spec: spec,
        best_c_reg: c_reg,
        scenario: cfg.scenario,
        cv,
        test: evaluate(&y_test, &pred_test, SplitTag::Test),
        train: evaluate(&y_train, &pred_train, SplitTag::Train),
        trace,
        skipped,
    })
}

fn subset_gram(gram: &GramMatrix, positions: &[usize]) -> GramMatrix {
    let m = positions.len();
    let mut values = Array2::zeros((m, m));
    for (a, &i) in positions.iter().enumerate() {
        for (b, &jj) in positions.iter().enumerate() {
            values[[a, b]] = gram.values[[i, jj]];
        }
    }
    GramMatrix {
        values,
        spec: gram.spec.clone(),
        min_eigenvalue: None,
    }
}

fn cross_from_gram(gram: &GramMatrix, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), cols.len()));
    for (a, &i) in rows.iter().enumerate() {
        for (b, &jj) in cols.iter().enumerate() {
            out[[a, b]] = gram.values[[i, jj]];
        }
    }
    out
}

/// Which kernel family a benchmark column refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyKind {
    KcsNeg,
    KcsPos,
    AmpKcsNeg,
    AmpKcsPos,
    Rbf,
    SqueezedPhase,
    SqueezedAmp,
    Ess,
    Qec,
}

impl FamilyKind {
    pub fn all() -> [FamilyKind; 9] {
        [
            FamilyKind::KcsNeg,
            FamilyKind::KcsPos,
            FamilyKind::AmpKcsNeg,
            FamilyKind::AmpKcsPos,
            FamilyKind::Rbf,
            FamilyKind::SqueezedPhase,
            FamilyKind::SqueezedAmp,
            FamilyKind::Ess,
            FamilyKind::Qec,
        ]
    }

    pub fn label(&self) -> &'static str {
        match self {
            FamilyKind::KcsNeg => "KCS-",
            FamilyKind::KcsPos => "KCS+",
            FamilyKind::AmpKcsNeg => "AmpKCS-",
            FamilyKind::AmpKcsPos => "AmpKCS+",
            FamilyKind::Rbf => "RBF",
            FamilyKind::SqueezedPhase => "Squeezing",
            FamilyKind::SqueezedAmp => "SqueezedAmp",
            FamilyKind::Ess => "ESS",
            FamilyKind::Qec => "QEC",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "kcs-neg" | "kcs-" => FamilyKind::KcsNeg,
            "kcs-pos" | "kcs+" => FamilyKind::KcsPos,
            "amp-kcs-neg" | "ampkcs-" => FamilyKind::AmpKcsNeg,
            "amp-kcs-pos" | "ampkcs+" => FamilyKind::AmpKcsPos,
            "rbf" => FamilyKind::Rbf,
            "squeezed-phase" | "squeezing" => FamilyKind::SqueezedPhase,
            "squeezed-amp" => FamilyKind::SqueezedAmp,
            "ess" => FamilyKind::Ess,
            "qec" => FamilyKind::Qec,
            other => {
                return Err(Error::InvalidParams(format!("unknown kernel family {other:?}")))
            }
        })
    }
}

/// The `j` grid of the hyperparameter analysis: half-integers 1/2 .. 5.
fn j_grid() -> Vec<crate::fockspace::HalfInt> {
    (1..=10)
        .map(|t| crate::fockspace::HalfInt::from_twice(t).unwrap())
        .collect()
}

/// Default hyperparameter grids per family. Phase families sweep
/// `kappa = sqrt(|lambda|/2) c` at fixed `|lambda| = 2`; amplitude families
/// sweep the bandwidth `lambda = +-2 kappa^2` so the kernel argument scale
/// covers the same range.
pub fn default_specs(kind: FamilyKind, realify: Realify) -> Vec<KernelSpec> {
    let kappas = [0.1, 0.25, 0.5, 1.0, 1.5];
    let mut out = Vec::new();
    match kind {
        FamilyKind::KcsPos => {
            for &j in &j_grid() {
                for &kappa in &kappas {
                    out.push(KernelSpec::new(KernelFamily::KerrPhasePos {
                        c: kappa,
                        lambda: 2.0,
                        j,
                    }));
                }
            }
        }
        FamilyKind::KcsNeg => {
            for &j in &j_grid() {
                for &kappa in &kappas {
                    out.push(KernelSpec::new(KernelFamily::KerrPhaseNeg {
                        c: kappa,
                        lambda: -2.0,
                        j,
                    }));
                }
            }
        }
        FamilyKind::AmpKcsPos => {
            for &j in &j_grid() {
                for &kappa in &kappas {
                    out.push(KernelSpec::new(KernelFamily::KerrAmpPos {
                        lambda: 2.0 * kappa * kappa,
                        j,
                    }));
                }
            }
        }
        FamilyKind::AmpKcsNeg => {
            for &j in &j_grid() {
                for &kappa in &kappas {
                    out.push(KernelSpec::new(KernelFamily::KerrAmpNeg {
                        lambda: -2.0 * kappa * kappa,
                        j,
                    }));
                }
            }
        }
        FamilyKind::Rbf => {
            for sigma in [0.1, 0.25, 0.5, 1.0, 2.0, 4.0] {
                out.push(KernelSpec::new(KernelFamily::Rbf { sigma }));
            }
        }
        FamilyKind::SqueezedPhase => {
            out.push(KernelSpec::new(KernelFamily::SqueezedPhase { c: 1.0 }));
        }
        FamilyKind::SqueezedAmp => {
            out.push(KernelSpec::new(KernelFamily::SqueezedAmp {}));
        }
        FamilyKind::Ess => {
            for l in [0.5, 1.0, 2.0] {
                for p in [0.5, 1.0, 2.0, 4.0] {
                    out.push(KernelSpec::new(KernelFamily::Ess { l, p }));
                }
            }
        }
        FamilyKind::Qec => {
            for l in [0.5, 1.0, 2.0] {
                for kappa in [0.5_f64, 1.0, 1.5] {
                    for twice_j in [1u32, 2, 4] {
                        out.push(KernelSpec::new(KernelFamily::Qec {
                            l,
                            lambda: -2.0 * kappa * kappa,
                            j: crate::fockspace::HalfInt::from_twice(twice_j).unwrap(),
                        }));
                    }
                }
            }
        }
    }
    out.into_iter().map(|s| s.with_realify(realify)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_moons, split, SplitSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn identity_gram(n: usize) -> GramMatrix {
        GramMatrix {
            values: Array2::eye(n),
            spec: KernelSpec::new(KernelFamily::Rbf { sigma: 1.0 }),
            min_eigenvalue: None,
        }
    }

    fn rbf_gram(points: &Array2<f64>, sigma: f64) -> GramMatrix {
        crate::kernels::gram(
            points.view(),
            &KernelSpec::new(KernelFamily::Rbf { sigma }),
        )
        .unwrap()
    }

    #[test]
    fn two_point_identity_kernel_solution() {
        // K = I, opposite labels, C = 10: alpha = (1, 1), bias = 0.
        let gram = identity_gram(2);
        let model = train_svm(&gram, &[1, 0], 10.0, 1e-10, 10_000, 0).unwrap();
        let a = model.alphas();
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(a[1], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(model.bias, 0.0, epsilon = 1e-8);
        assert_eq!(model.support_idx, vec![0, 1]);
        // Brute force agrees exactly.
        let qp = brute_force_qp(&gram, &[1, 0], 10.0).unwrap();
        assert_abs_diff_eq!(qp.alphas()[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(qp.bias, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn separable_points_reach_zero_training_error() {
        let pts = arr2(&[[0.0, 0.0], [0.1, 0.2], [3.0, 3.0], [3.2, 2.9]]);
        let labels = [0u8, 0, 1, 1];
        let gram = rbf_gram(&pts, 1.0);
        let model = train_svm(&gram, &labels, 100.0, 1e-8, 100_000, 1).unwrap();
        let (pred, _) = predict(&model, gram.values.view()).unwrap();
        assert_eq!(pred, labels);
        let report = evaluate(&labels, &pred, SplitTag::Train);
        assert_eq!(report.f1, 1.0);
    }

    #[test]
    fn smo_matches_brute_force_on_random_instances() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..25 {
            let n = rng.gen_range(4..=12);
            let mut pts = Array2::zeros((n, 2));
            for v in pts.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let sigma = rng.gen_range(0.5..2.0);
            let c_reg = [0.1, 1.0, 10.0][trial % 3];
            let gram = rbf_gram(&pts, sigma);
            let smo = train_svm(&gram, &labels, c_reg, 1e-10, 1_000_000, trial as u64).unwrap();
            let qp = brute_force_qp(&gram, &labels, c_reg).unwrap();
            let d_smo = dual_objective(&gram, &smo);
            let d_qp = dual_objective(&gram, &qp);
            assert!(
                (d_smo - d_qp).abs() < 1e-6,
                "trial {trial}: dual objectives {d_smo} vs {d_qp}"
            );
            let (pred_smo, _) = predict(&smo, gram.values.view()).unwrap();
            let (pred_qp, _) = predict(&qp, gram.values.view()).unwrap();
            assert_eq!(pred_smo, pred_qp, "trial {trial}");
            // Box constraints hold exactly.
            for &a in &qp.alphas() {
                assert!((0.0..=c_reg).contains(&a));
            }
            // Equality constraint.
            let balance: f64 = smo.dual_coefs.iter().sum();
            assert!(balance.abs() < 1e-8);
        }
    }

    #[test]
    fn duality_gap_closes_on_random_instances() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..10 {
            let n = 8;
            let mut pts = Array2::zeros((n, 2));
            for v in pts.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[n - 1] = 1;
            let gram = rbf_gram(&pts, 1.0);
            let qp = brute_force_qp(&gram, &labels, 1.0).unwrap();
            let gap = primal_objective(&gram, &labels, &qp) - dual_objective(&gram, &qp);
            assert!(gap.abs() < 1e-8, "trial {trial}: duality gap {gap}");
        }
    }

    #[test]
    fn free_support_vectors_sit_on_margin() {
        let pts = arr2(&[[0.0, 0.0], [0.4, 0.1], [2.0, 2.0], [2.2, 1.8], [1.0, 1.1]]);
        let labels = [0u8, 0, 1, 1, 0];
        let gram = rbf_gram(&pts, 1.0);
        let tol = 1e-10;
        let model = train_svm(&gram, &labels, 5.0, tol, 1_000_000, 3).unwrap();
        let (_, decisions) = predict(&model, gram.values.view()).unwrap();
        for (i, &a) in model.alphas().iter().enumerate() {
            if a > 1e-9 && a < 5.0 - 1e-9 {
                let y = if labels[i] == 0 { -1.0 } else { 1.0 };
                assert!(
                    (decisions[i] - y).abs() < 1e-6,
                    "free SV {i} off margin: f = {}",
                    decisions[i]
                );
            }
        }
    }

    #[test]
    fn label_flip_flips_predictions() {
        let pts = arr2(&[[0.0, 0.3], [0.5, 0.1], [2.0, 2.0], [2.4, 1.7], [1.2, 0.2], [0.3, 2.0]]);
        let labels = [0u8, 0, 1, 1, 0, 1];
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let gram = rbf_gram(&pts, 1.0);
        let m1 = train_svm(&gram, &labels, 2.0, 1e-10, 1_000_000, 9).unwrap();
        let m2 = train_svm(&gram, &flipped, 2.0, 1e-10, 1_000_000, 9).unwrap();
        let (p1, _) = predict(&m1, gram.values.view()).unwrap();
        let (p2, _) = predict(&m2, gram.values.view()).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(*a, 1 - *b);
        }
    }

    #[test]
    fn gram_scaling_with_inverse_c_preserves_predictions() {
        let pts = arr2(&[[0.1, 0.2], [0.4, 0.0], [1.8, 2.1], [2.2, 1.6], [1.0, 1.4]]);
        let labels = [0u8, 0, 1, 1, 0];
        let gram = rbf_gram(&pts, 1.0);
        let scale = 3.5;
        let scaled = GramMatrix {
            values: gram.values.mapv(|v| v * scale),
            spec: gram.spec.clone(),
            min_eigenvalue: None,
        };
        let m1 = train_svm(&gram, &labels, 2.0, 1e-12, 2_000_000, 5).unwrap();
        let m2 = train_svm(&scaled, &labels, 2.0 / scale, 1e-12, 2_000_000, 5).unwrap();
        let (p1, _) = predict(&m1, gram.values.view()).unwrap();
        let (p2, _) = predict(&m2, scaled.values.view()).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn metric_arithmetic() {
        // TP=40, FP=10, FN=10, TN=40.
        let confusion = [[40, 10], [10, 40]];
        assert_abs_diff_eq!(f1_score(&confusion), 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(accuracy(&confusion), 0.8, epsilon = 1e-12);
        // Perfect prediction.
        assert_eq!(f1_score(&[[50, 0], [0, 50]]), 1.0);
        // All-one-class predictor on balanced data.
        let one_class = [[0, 50], [0, 50]];
        assert_abs_diff_eq!(accuracy(&one_class), 0.5, epsilon = 1e-12);
        // Degenerate F1 defined as zero.
        assert_eq!(f1_score(&[[10, 0], [0, 0]]), 0.0);
    }

    #[test]
    fn non_convergence_carries_best_iterate() {
        let pts = arr2(&[[0.0, 0.0], [0.5, 0.5], [1.5, 1.5], [2.0, 2.0]]);
        let labels = [0u8, 1, 0, 1];
        let gram = rbf_gram(&pts, 1.0);
        match train_svm(&gram, &labels, 10.0, 1e-12, 3, 0) {
            Err(Error::SvmNotConverged { model }) => {
                assert_eq!(model.dual_coefs.len(), 4);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn grid_search_degenerate_cell_equals_direct_train() {
        let ds = make_moons(60, 20, 0.2, 17).unwrap();
        let plan = split(
            &ds,
            SplitSpec::Counts {
                n_train: 60,
                n_test: 20,
            },
            None,
            true,
            17,
        )
        .unwrap();
        let spec = KernelSpec::new(KernelFamily::Rbf { sigma: 1.0 });
        let mut cfg = GridSearchConfig::new(Scenario::TestDriven, 3);
        cfg.c_regs = vec![1.0];
        let result = grid_search(&ds, &plan, &[spec.clone()], &cfg).unwrap();
        assert_eq!(result.trace.len(), 1);
        assert_eq!(result.best_c_reg, 1.0);
        assert_eq!(result.best_spec, spec);
        assert_eq!(result.test.f1, result.trace[0].test_f1);
    }

    #[test]
    fn grid_search_trace_covers_grid_and_is_deterministic() {
        let ds = make_moons(60, 20, 0.2, 23).unwrap();
        let plan = split(
            &ds,
            SplitSpec::Counts {
                n_train: 60,
                n_test: 20,
            },
            Some(3),
            true,
            23,
        )
        .unwrap();
        let specs = vec![
            KernelSpec::new(KernelFamily::Rbf { sigma: 0.5 }),
            KernelSpec::new(KernelFamily::Rbf { sigma: 1.0 }),
            KernelSpec::new(KernelFamily::Rbf { sigma: 2.0 }),
        ];
        let mut cfg = GridSearchConfig::new(Scenario::CrossValDriven, 11);
        cfg.c_regs = vec![0.1, 1.0];
        let r1 = grid_search(&ds, &plan, &specs, &cfg).unwrap();
        let r2 = grid_search(&ds, &plan, &specs, &cfg).unwrap();
        assert_eq!(r1.trace.len(), 6);
        assert!(r1.cv.is_some());
        let j1 = serde_json::to_string(&r1).unwrap();
        let j2 = serde_json::to_string(&r2).unwrap();
        assert_eq!(j1, j2, "byte-identical results under a fixed seed");
    }

    #[test]
    fn grid_search_skips_domain_violations_with_reason() {
        let ds = make_moons(40, 10, 0.2, 5).unwrap();
        let plan = split(
            &ds,
            SplitSpec::Counts {
                n_train: 40,
                n_test: 10,
            },
            None,
            true,
            5,
        )
        .unwrap();
        // Out-of-domain phase modulus: sqrt(|l|/2) c >= pi/2.
        let bad = KernelSpec::new(KernelFamily::KerrPhaseNeg {
            c: 2.0,
            lambda: -2.0,
            j: crate::fockspace::HalfInt::from_twice(1).unwrap(),
        });
        let good = KernelSpec::new(KernelFamily::Rbf { sigma: 1.0 });
        let mut cfg = GridSearchConfig::new(Scenario::TestDriven, 1);
        cfg.c_regs = vec![1.0];
        let result = grid_search(&ds, &plan, &[bad, good], &cfg).unwrap();
        assert_eq!(result.trace.len(), 1);
        assert_eq!(result.skipped.len(), 1);
        assert!(result.skipped[0].reason.contains("domain"));
    }

    #[test]
    fn default_grids_have_documented_shapes() {
        assert_eq!(default_specs(FamilyKind::KcsPos, Realify::SquaredModulus).len(), 50);
        assert_eq!(default_specs(FamilyKind::AmpKcsNeg, Realify::SquaredModulus).len(), 50);
        assert_eq!(default_specs(FamilyKind::Rbf, Realify::SquaredModulus).len(), 6);
        assert_eq!(default_specs(FamilyKind::SqueezedPhase, Realify::SquaredModulus).len(), 1);
        assert_eq!(default_specs(FamilyKind::Ess, Realify::SquaredModulus).len(), 12);
        assert_eq!(default_specs(FamilyKind::Qec, Realify::SquaredModulus).len(), 27);
        for spec in default_specs(FamilyKind::KcsNeg, Realify::SquaredModulus) {
            spec.validate().unwrap();
        }
    }
}
