//! Fisher information assembly, Cramer-Rao totals, eigenvalue and
//! banded-inverse bounds, bandedness diagnostics, and biased-estimation
//! analysis.
//!
//! Not implemented on purpose (documented here for scope): the
//! approximately-banded inverse bound (the analogue of the strict-band result
//! for matrices whose distance to banded ones decays), and the pentadiagonal
//! counterpart of the tridiagonal inverse bracket. Both are checked forms of
//! the same decay principle; the strict-band and tridiagonal cases below are
//! the ones the toolkit relies on.

use ndarray::{Array2, ArrayView2};

use crate::error::{CoreError, Result};
use crate::linalg::{band_truncate, inv_trace_sym, pseudo_inverse_sym, spectral_norm_sym, sym_eigen};
use crate::scalar::Scalar;
use crate::special::erf;

/// Default floor below which an outcome probability is excluded from the
/// information sum (guards the 1/p weight).
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Relative eigenvalue cutoff of the pseudo-inverse path.
pub const RANK_RCOND: f64 = 1e-10;

/// Default "strongly diagonally dominant" threshold for row ratios.
pub const DOMINANCE_THRESHOLD: f64 = 3.0;

/// Default off-diagonal mass fraction for the effective bandwidth.
pub const BANDWIDTH_EPSILON: f64 = 0.05;

/// Fisher information matrix with its standard diagnostics.
#[derive(Debug, Clone)]
pub struct FisherReport<T> {
    pub matrix: Array2<T>,
    pub probability_floor: T,
    /// Tr F^-1 through the rank-cut pseudo-inverse.
    pub inv_trace: T,
    pub effective_rank: usize,
    pub gershgorin_lower: T,
    pub trace_lower: T,
    /// rho_j = F_jj / sum_{k != j} |F_jk| (infinite for a decoupled row).
    pub dominance_ratios: Vec<T>,
    pub effective_bandwidth: usize,
}

impl<T: Scalar> FisherReport<T> {
    pub fn from_matrix(matrix: Array2<T>, probability_floor: T) -> Self {
        let view = matrix.view();
        let (inv_trace, effective_rank) = inv_trace_sym(&view, T::of(RANK_RCOND));
        let gershgorin_lower = gershgorin_lower(&view);
        let trace_lower = trace_lower(&view);
        let dominance_ratios = dominance_ratios(&view);
        let effective_bandwidth = effective_bandwidth(&view, T::of(BANDWIDTH_EPSILON));
        Self {
            matrix,
            probability_floor,
            inv_trace,
            effective_rank,
            gershgorin_lower,
            trace_lower,
            dominance_ratios,
            effective_bandwidth,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dominance_verdict(&self, threshold: T) -> bool {
        self.dominance_ratios.iter().all(|&r| r >= threshold)
    }
}

/// Assemble the per-event FIM from normalized probabilities (plus the
/// no-counts completion) and their gradients. Outcomes with probability below
/// the floor are skipped; negative probabilities are rejected.
pub fn build_fim<T: Scalar>(
    p_bar: &[T],
    p0: T,
    gradients: &ArrayView2<T>,
    grad_p0: &[T],
    floor: T,
) -> Result<FisherReport<T>> {
    let k = p_bar.len();
    let m = gradients.ncols();
    if gradients.nrows() != k || grad_p0.len() != m {
        return Err(CoreError::InvalidParameter("gradient shape mismatch".into()));
    }
    for (i, &p) in p_bar.iter().enumerate() {
        if p < T::zero() {
            return Err(CoreError::NegativeProbability { index: i, value: p.to_f64_lossy() });
        }
    }
    if p0 < T::zero() {
        return Err(CoreError::NegativeProbability { index: k, value: p0.to_f64_lossy() });
    }
    let total: T = p_bar.iter().copied().sum::<T>() + p0;
    if (total - T::one()).abs() > T::of(1e-9) {
        return Err(CoreError::InvalidParameter(format!(
            "probabilities plus no-counts must sum to 1, got {total}"
        )));
    }
    let mut f = Array2::<T>::zeros((m, m));
    let mut add = |p: T, g: &dyn Fn(usize) -> T| {
        if p < floor {
            return;
        }
        let inv = T::one() / p;
        for a in 0..m {
            let ga = g(a);
            if ga == T::zero() {
                continue;
            }
            for b in a..m {
                let v = inv * ga * g(b);
                f[[a, b]] = f[[a, b]] + v;
                if a != b {
                    f[[b, a]] = f[[b, a]] + v;
                }
            }
        }
    };
    for kk in 0..k {
        add(p_bar[kk], &|a| gradients[[kk, a]]);
    }
    add(p0, &|a| grad_p0[a]);
    Ok(FisherReport::from_matrix(f, floor))
}

/// Tr F^-1 / N. Rank deficiency is an error (the caller can fall back to the
/// pseudo-inverse value carried by the report).
pub fn crb_total<T: Scalar>(f: &ArrayView2<T>, events: u64) -> Result<T> {
    let (tr, rank) = inv_trace_sym(f, T::of(RANK_RCOND));
    if rank < f.nrows() {
        return Err(CoreError::RankDeficient { rank, dim: f.nrows() });
    }
    Ok(tr / T::of(events as f64))
}

/// Gershgorin lower bound on the smallest eigenvalue:
/// min_j (F_jj - sum_{k != j} |F_jk|).
pub fn gershgorin_lower<T: Scalar>(f: &ArrayView2<T>) -> T {
    let n = f.nrows();
    let mut best = T::infinity();
    for j in 0..n {
        let mut off = T::zero();
        for k in 0..n {
            if k != j {
                off = off + f[[j, k]].abs();
            }
        }
        best = best.min(f[[j, j]] - off);
    }
    best
}

/// Trace-based lower bound on the smallest eigenvalue:
/// Tr/M - sqrt((M-1) S) with S = Tr(F^2)/M - (Tr/M)^2.
pub fn trace_lower<T: Scalar>(f: &ArrayView2<T>) -> T {
    let n = f.nrows();
    let nf = T::of(n as f64);
    let mut tr = T::zero();
    let mut tr2 = T::zero();
    for i in 0..n {
        tr = tr + f[[i, i]];
        for j in 0..n {
            tr2 = tr2 + f[[i, j]] * f[[j, i]];
        }
    }
    let mean = tr / nf;
    let s = (tr2 / nf - mean * mean).max(T::zero());
    mean - (T::of((n - 1) as f64) * s).sqrt()
}

/// Row dominance ratios rho_j.
pub fn dominance_ratios<T: Scalar>(f: &ArrayView2<T>) -> Vec<T> {
    let n = f.nrows();
    (0..n)
        .map(|j| {
            let mut off = T::zero();
            for k in 0..n {
                if k != j {
                    off = off + f[[j, k]].abs();
                }
            }
            if off > T::zero() {
                f[[j, j]] / off
            } else {
                T::infinity()
            }
        })
        .collect()
}

/// Dominance profile: ratios and the min-ratio verdict at a threshold.
pub fn dominance_profile<T: Scalar>(f: &ArrayView2<T>, threshold: T) -> (Vec<T>, bool) {
    let ratios = dominance_ratios(f);
    let verdict = ratios.iter().all(|&r| r >= threshold);
    (ratios, verdict)
}

/// Smallest l such that the off-diagonal mass beyond the band l is at most
/// epsilon of the total off-diagonal mass. 0 for a diagonal matrix.
pub fn effective_bandwidth<T: Scalar>(f: &ArrayView2<T>, epsilon: T) -> usize {
    let n = f.nrows();
    let mut total = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total = total + f[[i, j]].abs();
            }
        }
    }
    if total == T::zero() {
        return 0;
    }
    for l in 0..n {
        let mut beyond = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i.abs_diff(j) > l {
                    beyond = beyond + f[[i, j]].abs();
                }
            }
        }
        if beyond <= epsilon * total {
            return l;
        }
    }
    n - 1
}

/// Bracket for |(A^-1)_jj| of a strictly diagonally dominant tridiagonal
/// matrix with nonnegative entries, from the entries within j +/- 2.
pub fn tridiag_inverse_bounds<T: Scalar>(a: &ArrayView2<T>, j: usize) -> Result<(T, T)> {
    let n = a.nrows();
    if n != a.ncols() || j >= n {
        return Err(CoreError::InvalidParameter("index out of range".into()));
    }
    for r in 0..n {
        for c in 0..n {
            if r.abs_diff(c) > 1 && a[[r, c]] != T::zero() {
                return Err(CoreError::MatrixStructure("tridiagonal"));
            }
            if a[[r, c]] < T::zero() {
                return Err(CoreError::MatrixStructure("nonnegative"));
            }
        }
    }
    for r in 0..n {
        let mut off = T::zero();
        for c in 0..n {
            if c != r {
                off = off + a[[r, c]].abs();
            }
        }
        if !(a[[r, r]].abs() > off) {
            return Err(CoreError::MatrixStructure("strictly diagonally dominant"));
        }
    }
    let at = |r: isize, c: isize| -> T {
        if r >= 0 && c >= 0 && (r as usize) < n && (c as usize) < n {
            a[[r as usize, c as usize]].abs()
        } else {
            T::zero()
        }
    };
    let ji = j as isize;
    let s = if j > 0 {
        -at(ji - 1, ji) / (at(ji - 1, ji - 1) + at(ji - 1, ji - 2))
    } else {
        T::zero()
    };
    let f = if j > 0 {
        -at(ji - 1, ji) / (at(ji - 1, ji - 1) - at(ji - 1, ji - 2))
    } else {
        T::zero()
    };
    let t = if j + 1 < n {
        -at(ji + 1, ji) / (at(ji + 1, ji + 1) + at(ji + 1, ji + 2))
    } else {
        T::zero()
    };
    let g = if j + 1 < n {
        -at(ji + 1, ji) / (at(ji + 1, ji + 1) - at(ji + 1, ji + 2))
    } else {
        T::zero()
    };
    let lower = T::one() / (at(ji, ji) + s * at(ji, ji - 1) + t * at(ji, ji + 1));
    let upper = T::one() / (at(ji, ji) + f * at(ji, ji - 1) + g * at(ji, ji + 1));
    Ok((lower, upper))
}

/// Outcome of the banded-inverse approximation check.
#[derive(Debug, Clone, Copy)]
pub struct BandedInverseCheck<T> {
    /// spectral gap between A^-1 and its band truncation at n*l
    pub distance: T,
    /// (1/lambda_min) ((lambda_max - lambda_min)/(lambda_max + lambda_min))^(n+1)
    pub bound: T,
    pub pass: bool,
}

/// Check that the inverse of an l-banded SPD matrix is approximated by its
/// n*l-band truncation within the spectral bound.
pub fn banded_inverse_approx_check<T: Scalar>(
    a: &ArrayView2<T>,
    n: usize,
) -> Result<BandedInverseCheck<T>> {
    let eig = sym_eigen(a);
    let lmin = eig.lambda_min();
    let lmax = eig.lambda_max();
    if !(lmin > T::zero()) {
        return Err(CoreError::MatrixStructure("symmetric positive definite"));
    }
    let l = crate::linalg::matrix_bandwidth(a, T::zero()).max(1);
    let inv = eig.map_rebuild(|v| T::one() / v);
    let trunc = band_truncate(&inv.view(), n * l);
    let diff = &inv - &trunc;
    let distance = spectral_norm_sym(&diff.view());
    let bound = (T::one() / lmin.abs())
        * ((lmax.abs() - lmin.abs()) / (lmax.abs() + lmin.abs())).powi(n as i32 + 1);
    Ok(BandedInverseCheck { distance, bound, pass: distance <= bound })
}

/// Biased Cramer-Rao analysis for a bias gradient matrix Upsilon.
#[derive(Debug, Clone)]
pub struct BiasAnalysis<T> {
    pub upsilon: Array2<T>,
    /// largest eigenvalue of Upsilon^T Upsilon
    pub gamma: T,
    /// (1/N) (I + Upsilon) F^-1 (I + Upsilon^T)
    pub covariance_lower_bound: Array2<T>,
    pub bound_is_psd: bool,
    /// Tr{(1 - sqrt(gamma))^2 F^-1} / N, when gamma < 1
    pub total_bound: Option<T>,
}

impl<T: Scalar> BiasAnalysis<T> {
    pub fn new(f: &ArrayView2<T>, upsilon: Array2<T>, events: u64) -> Result<Self> {
        let cov = biased_crb(f, &upsilon.view(), events)?;
        let gamma = estimate_gamma(&upsilon.view());
        let eig = sym_eigen(&cov.view());
        let scale = eig.lambda_max().abs().max(T::min_positive_value());
        let psd = eig.lambda_min() >= -T::of(1e-9) * scale;
        let total = gamma_total_bound(f, gamma, events).ok();
        Ok(Self {
            upsilon,
            gamma,
            covariance_lower_bound: cov,
            bound_is_psd: psd,
            total_bound: total,
        })
    }
}

/// (1/N) (I + Upsilon) F^-1 (I + Upsilon^T); flags singular F.
pub fn biased_crb<T: Scalar>(
    f: &ArrayView2<T>,
    upsilon: &ArrayView2<T>,
    events: u64,
) -> Result<Array2<T>> {
    let m = f.nrows();
    if upsilon.nrows() != m || upsilon.ncols() != m {
        return Err(CoreError::InvalidParameter("bias gradient shape mismatch".into()));
    }
    let (finv, rank) = pseudo_inverse_sym(f, T::of(RANK_RCOND));
    if rank < m {
        return Err(CoreError::RankDeficient { rank, dim: m });
    }
    let mut iu = Array2::<T>::eye(m);
    iu = iu + upsilon;
    let tmp = iu.dot(&finv);
    let mut out = tmp.dot(&iu.t());
    let inv_n = T::one() / T::of(events as f64);
    out.mapv_inplace(|v| v * inv_n);
    Ok(out)
}

/// gamma = largest eigenvalue of Upsilon^T Upsilon.
pub fn estimate_gamma<T: Scalar>(upsilon: &ArrayView2<T>) -> T {
    let utu = upsilon.t().dot(upsilon);
    let eig = sym_eigen(&utu.view());
    eig.lambda_max().max(T::zero())
}

/// (1 - sqrt(gamma))^2 Tr F^-1 / N; undefined for gamma >= 1.
pub fn gamma_total_bound<T: Scalar>(f: &ArrayView2<T>, gamma: T, events: u64) -> Result<T> {
    if gamma >= T::one() {
        return Err(CoreError::GammaOutOfRange { gamma: gamma.to_f64_lossy() });
    }
    let (tr, rank) = inv_trace_sym(f, T::of(RANK_RCOND));
    if rank < f.nrows() {
        return Err(CoreError::RankDeficient { rank, dim: f.nrows() });
    }
    let g = T::one() - gamma.sqrt();
    Ok(g * g * tr / T::of(events as f64))
}

/// Closed-form statistics of the clip-at-one estimator y' = min(y, 1) of a
/// single parameter x with unbiased variance Delta^2 = 1/(F11 N).
#[derive(Debug, Clone, Copy)]
pub struct ClippedEstimatorStats<T> {
    pub x: T,
    pub delta_sq: T,
    pub xi: T,
    pub mean: T,
    /// biased CRB value (1/2)(1 + erf xi) Delta^2
    pub variance_bound: T,
    /// mean squared error <(y' - x)^2>
    pub mse: T,
}

pub fn clipped_estimator_stats<T: Scalar>(x: T, f11: T, events: u64) -> Result<ClippedEstimatorStats<T>> {
    let n = T::of(events as f64);
    let fn_ = f11 * n;
    if !(fn_ > T::zero()) {
        return Err(CoreError::InvalidParameter("F11 N must be positive".into()));
    }
    if x > T::one() {
        return Err(CoreError::InvalidParameter("x must satisfy x <= 1".into()));
    }
    let delta_sq = T::one() / fn_;
    let xi = (T::one() - x) * (fn_ / T::of(2.0)).sqrt();
    let e = erf(xi);
    let gauss = (-(xi * xi)).exp();
    let half = T::of(0.5);
    let mean = half
        * (T::one() - e + x * (T::one() + e)
            - gauss * (T::of(2.0) / (T::of(std::f64::consts::PI) * fn_)).sqrt());
    let variance_bound = half * (T::one() + e) * delta_sq;
    // <(y'-x)^2>/Delta^2 = (1+erf xi)/2 + xi^2 (1 - erf xi) - (xi/sqrt(pi)) exp(-xi^2)
    let mse = (half * (T::one() + e) + xi * xi * (T::one() - e)
        - xi / T::of(std::f64::consts::PI.sqrt()) * gauss)
        * delta_sq;
    Ok(ClippedEstimatorStats { x, delta_sq, xi, mean, variance_bound, mse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    #[test]
    fn binary_model_single_parameter() {
        // outcomes {p(x), 1-p(x)} -> F11 = (dp/dx)^2 / (p(1-p))
        let p = 0.3f64;
        let dp = 0.7;
        let grads = array![[dp], [-dp]];
        let rep = build_fim(&[p, 1.0 - p], 0.0, &grads.view(), &[0.0], 1e-12).unwrap();
        let want = dp * dp / (p * (1.0 - p));
        assert_relative_eq!(rep.matrix[[0, 0]], want, max_relative = 1e-12);
    }

    #[test]
    fn disjoint_outcomes_give_diagonal_fim() {
        let p = [0.2, 0.3, 0.1];
        let grads = array![[0.5, 0.0, 0.0], [0.0, 0.4, 0.0], [0.0, 0.0, 0.3]];
        let rep = build_fim(&p, 0.4, &grads.view(), &[0.0, 0.0, 0.0], 1e-12).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(rep.matrix[[i, j]], 0.0);
                }
            }
        }
        assert!(rep.dominance_verdict(3.0));
        assert_eq!(rep.effective_bandwidth, 0);
    }

    #[test]
    fn build_fim_rejects_negative_probability() {
        let grads = array![[0.1], [0.2]];
        assert!(build_fim(&[-0.1, 1.1], 0.0, &grads.view(), &[0.0], 1e-12).is_err());
    }

    #[test]
    fn rank_one_completion_cannot_lower_lambda_min() {
        // adding the P0 term is a PSD rank-one update
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = 4;
            let kq = 7;
            let mut p: Vec<f64> = (0..kq).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = p.iter().sum::<f64>() * 1.25;
            p.iter_mut().for_each(|v| *v /= s);
            let p0 = 1.0 - p.iter().sum::<f64>();
            let mut grads = Array2::<f64>::zeros((kq, m));
            for k in 0..kq {
                for a in 0..m {
                    grads[[k, a]] = rng.random_range(-0.2..0.2);
                }
            }
            let gp0: Vec<f64> = (0..m).map(|a| -grads.column(a).sum()).collect();
            let zeros = vec![0.0; m];
            let without = build_fim(&p, p0, &grads.view(), &zeros, 1e-12).unwrap();
            let with = build_fim(&p, p0, &grads.view(), &gp0, 1e-12).unwrap();
            let lw = sym_eigen(&without.matrix.view()).lambda_min();
            let lwith = sym_eigen(&with.matrix.view()).lambda_min();
            assert!(lwith >= lw - 1e-12, "rank-one PSD term lowered lambda_min");
        }
    }

    #[test]
    fn crb_total_diagonal_and_identity() {
        let f = Array2::from_diag(&ndarray::arr1(&[2.0, 4.0, 8.0]));
        let got = crb_total(&f.view(), 10).unwrap();
        assert_relative_eq!(got, (0.5 + 0.25 + 0.125) / 10.0, max_relative = 1e-12);
        let eye = Array2::<f64>::eye(10);
        assert_relative_eq!(crb_total(&eye.view(), 100).unwrap(), 0.1, max_relative = 1e-12);
        let sing = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(crb_total(&sing.view(), 10).is_err());
    }

    #[test]
    fn eigen_bounds_on_simple_matrices() {
        let f = array![[2.0, 1.0], [1.0, 2.0]];
        assert_abs_diff_eq!(gershgorin_lower(&f.view()), 1.0, epsilon = 1e-14);
        // trace bound: Tr/M = 2, S = 1 -> 2 - 1 = 1 = lambda_min
        assert_abs_diff_eq!(trace_lower(&f.view()), 1.0, epsilon = 1e-12);
        let d = Array2::from_diag(&ndarray::arr1(&[3.0, 5.0]));
        assert_abs_diff_eq!(gershgorin_lower(&d.view()), 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(trace_lower(&(2.0 * Array2::<f64>::eye(4)).view()), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn dominance_profile_examples() {
        let ones = array![[1.0, 1.0], [1.0, 1.0]];
        let (r, v) = dominance_profile(&ones.view(), 3.0);
        assert_eq!(r, vec![1.0, 1.0]);
        assert!(!v);
        let d = Array2::from_diag(&ndarray::arr1(&[1.0, 2.0]));
        let (r, v) = dominance_profile(&d.view(), 3.0);
        assert!(r.iter().all(|x: &f64| x.is_infinite()));
        assert!(v);
    }

    #[test]
    fn effective_bandwidth_tridiagonal() {
        let mut f = Array2::<f64>::eye(8);
        for i in 0..7 {
            f[[i, i + 1]] = 0.4;
            f[[i + 1, i]] = 0.4;
        }
        assert_eq!(effective_bandwidth(&f.view(), 0.5), 1);
        assert_eq!(effective_bandwidth(&f.view(), 0.05), 1);
        assert_eq!(effective_bandwidth(&Array2::<f64>::eye(5).view(), 0.05), 0);
    }

    #[test]
    fn tridiag_bounds_diagonal_case() {
        let a = Array2::from_diag(&ndarray::arr1(&[2.0, 5.0, 4.0]));
        for j in 0..3 {
            let (lo, hi) = tridiag_inverse_bounds(&a.view(), j).unwrap();
            assert_abs_diff_eq!(lo, 1.0 / a[[j, j]], epsilon = 1e-14);
            assert_abs_diff_eq!(hi, 1.0 / a[[j, j]], epsilon = 1e-14);
        }
    }

    #[test]
    fn tridiag_bounds_bracket_dense_inverse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let m = 20usize;
            let mut a = Array2::<f64>::zeros((m, m));
            for i in 0..m {
                if i > 0 {
                    a[[i, i - 1]] = rng.random_range(0.0..0.45);
                }
                if i + 1 < m {
                    a[[i, i + 1]] = rng.random_range(0.0..0.45);
                }
            }
            for i in 0..m {
                let off: f64 = (0..m).filter(|&c| c != i).map(|c| a[[i, c]]).sum();
                a[[i, i]] = off + rng.random_range(0.05..2.0);
            }
            let na = nalgebra::DMatrix::from_fn(m, m, |r, c| a[[r, c]]);
            let inv = na.try_inverse().unwrap();
            for j in 0..m {
                let (lo, hi) = tridiag_inverse_bounds(&a.view(), j).unwrap();
                let c = inv[(j, j)].abs();
                assert!(lo <= c + 1e-12 && c <= hi + 1e-12, "bracket failed: {lo} {c} {hi}");
            }
        }
    }

    #[test]
    fn tridiag_bounds_tighten_with_dominance() {
        // scaling the diagonal up shrinks the bracket width
        let mut prev_gap = f64::INFINITY;
        for boost in [1.1, 1.5, 2.5, 5.0, 20.0] {
            let m = 8;
            let mut a = Array2::<f64>::zeros((m, m));
            for i in 0..m {
                if i > 0 {
                    a[[i, i - 1]] = 0.4;
                }
                if i + 1 < m {
                    a[[i, i + 1]] = 0.4;
                }
                a[[i, i]] = 0.8 * boost;
            }
            let (lo, hi) = tridiag_inverse_bounds(&a.view(), m / 2).unwrap();
            let gap = hi - lo;
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
    }

    #[test]
    fn tridiag_bounds_reject_bad_structure() {
        let dense = array![[2.0, 0.3, 0.1], [0.3, 2.0, 0.3], [0.1, 0.3, 2.0]];
        assert!(matches!(
            tridiag_inverse_bounds(&dense.view(), 0),
            Err(CoreError::MatrixStructure("tridiagonal"))
        ));
        let weak = array![[0.5, 0.6], [0.6, 0.5]];
        assert!(tridiag_inverse_bounds(&weak.view(), 0).is_err());
    }

    #[test]
    fn banded_check_diagonal_and_random() {
        let d = Array2::from_diag(&ndarray::arr1(&[1.0, 2.0, 3.0]));
        let chk = banded_inverse_approx_check(&d.view(), 1).unwrap();
        assert!(chk.pass);
        assert_abs_diff_eq!(chk.distance, 0.0, epsilon = 1e-12);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = 32;
            let mut a = Array2::<f64>::zeros((m, m));
            for i in 0..m - 1 {
                let v: f64 = rng.random_range(-0.4..0.4);
                a[[i, i + 1]] = v;
                a[[i + 1, i]] = v;
            }
            for i in 0..m {
                let off: f64 = (0..m).filter(|&c| c != i).map(|c| a[[i, c]].abs()).sum();
                a[[i, i]] = off + rng.random_range(0.1..2.0);
            }
            for n in 1..=5 {
                let chk = banded_inverse_approx_check(&a.view(), n).unwrap();
                assert!(chk.pass, "n={n}: distance {} > bound {}", chk.distance, chk.bound);
            }
        }
        // non-SPD rejected
        let neg = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(banded_inverse_approx_check(&neg.view(), 1).is_err());
    }

    #[test]
    fn banded_check_well_conditioned_limit() {
        // lambda_max / lambda_min -> 1 sends both bound and distance to zero
        let mut a = Array2::<f64>::eye(16) * 5.0;
        for i in 0..15 {
            a[[i, i + 1]] = 1e-6;
            a[[i + 1, i]] = 1e-6;
        }
        let chk = banded_inverse_approx_check(&a.view(), 1).unwrap();
        assert!(chk.bound < 1e-10);
        assert!(chk.distance <= chk.bound);
    }

    #[test]
    fn biased_crb_limits() {
        let f = array![[4.0, 0.5], [0.5, 3.0]];
        let z = Array2::<f64>::zeros((2, 2));
        let cov = biased_crb(&f.view(), &z.view(), 10).unwrap();
        let (finv, _) = pseudo_inverse_sym(&f.view(), 1e-10);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(cov[[i, j]], finv[[i, j]] / 10.0, epsilon = 1e-12);
            }
        }
        let minus_i = -Array2::<f64>::eye(2);
        let cov = biased_crb(&f.view(), &minus_i.view(), 10).unwrap();
        assert!(cov.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn gamma_bound_values() {
        let f = Array2::<f64>::eye(3) * 2.0;
        // Tr F^-1 = 1.5
        assert_relative_eq!(gamma_total_bound(&f.view(), 0.0, 3).unwrap(), 0.5, max_relative = 1e-12);
        assert_abs_diff_eq!(gamma_total_bound(&f.view(), 1.0 - 1e-15, 3).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            gamma_total_bound(&f.view(), 0.25, 3).unwrap(),
            0.25 * 1.5 / 3.0,
            max_relative = 1e-12
        );
        assert!(gamma_total_bound(&f.view(), 1.0, 3).is_err());
    }

    #[test]
    fn estimate_gamma_is_squared_top_singular_value() {
        let u = array![[0.0, 0.3], [0.0, 0.0]];
        assert_relative_eq!(estimate_gamma(&u.view()), 0.09, max_relative = 1e-12);
    }

    #[test]
    fn clipped_stats_boundary_and_far_field() {
        let f11n = 50.0;
        let st = clipped_estimator_stats(1.0, f11n, 1).unwrap();
        assert_abs_diff_eq!(st.xi, 0.0, epsilon = 1e-14);
        assert_relative_eq!(st.variance_bound, 0.5 * st.delta_sq, max_relative = 1e-12);
        assert_relative_eq!(st.mse, 0.5 * st.delta_sq, max_relative = 1e-12);
        // far from the boundary the estimator is unbiased with variance Delta^2
        let far = clipped_estimator_stats(0.0, 5000.0, 1).unwrap();
        assert_abs_diff_eq!(far.mean, 0.0, epsilon = 1e-9);
        assert_relative_eq!(far.variance_bound, far.delta_sq, max_relative = 1e-9);
        assert_relative_eq!(far.mse, far.delta_sq, max_relative = 1e-9);
    }

    #[test]
    fn clipped_stats_match_quadrature_oracle() {
        // oracle: direct numerical integration of the clipped-estimator
        // moments over the Gaussian density of the unbiased estimator
        let f11n = 50.0;
        let delta = (1.0f64 / f11n).sqrt();
        for &x in &[0.0, 0.3, 0.6, 0.8, 0.9, 0.95, 1.0] {
            let st = clipped_estimator_stats(x, f11n, 1).unwrap();
            let steps = 400_000;
            let lo = x - 10.0 * delta;
            let hi = x + 10.0 * delta;
            let h = (hi - lo) / steps as f64;
            let mut mean = 0.0;
            let mut mse = 0.0;
            for i in 0..=steps {
                let y = lo + i as f64 * h;
                let w = (-(y - x) * (y - x) / (2.0 * delta * delta)).exp()
                    / (delta * (2.0 * std::f64::consts::PI).sqrt());
                let yp = y.min(1.0);
                let trapz = if i == 0 || i == steps { 0.5 } else { 1.0 };
                mean += trapz * w * yp * h;
                mse += trapz * w * (yp - x) * (yp - x) * h;
            }
            assert_relative_eq!(st.mean, mean, max_relative = 1e-6);
            assert_relative_eq!(st.mse, mse, max_relative = 1e-5);
            assert!(st.mse <= st.delta_sq * (1.0 + 1e-12));
        }
    }

    #[test]
    fn mse_stays_below_unbiased_variance_on_grid() {
        for i in 0..=40 {
            let xi = 0.1 * i as f64;
            let x = 1.0 - xi * (2.0f64 / 50.0).sqrt();
            let st = clipped_estimator_stats(x, 50.0, 1).unwrap();
            assert!(st.mse <= st.delta_sq * (1.0 + 1e-12), "xi={xi}");
        }
    }
}
