//! Box-constrained minimization on [0, 1]^m: projected gradient with
//! Barzilai-Borwein steps and Armijo backtracking. Deterministic for fixed
//! inputs and configuration.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig<T> {
    pub max_iters: usize,
    /// infinity-norm tolerance on the projected gradient step x - P(x - g)
    pub grad_tol: T,
    /// infinity-norm tolerance on the accepted step
    pub step_tol: T,
    /// Armijo sufficient-decrease constant
    pub armijo: T,
    pub seed: u64,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 600,
            grad_tol: T::of(1e-10),
            step_tol: T::of(1e-13),
            armijo: T::of(1e-4),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome<T> {
    pub x: Vec<T>,
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
}

fn project<T: Scalar>(x: &mut [T]) {
    for v in x {
        *v = (*v).max(T::zero()).min(T::one());
    }
}

/// Minimize `f` (value and gradient) over the unit box starting from `x0`.
/// The objective is nonincreasing across accepted steps.
pub fn minimize_box<T, F>(mut f: F, x0: &[T], cfg: &SolverConfig<T>) -> SolveOutcome<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    let m = x0.len();
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut g) = f(&x);
    let mut alpha = {
        let gmax = g.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
        if gmax > T::zero() {
            (T::one() / gmax).min(T::of(1.0))
        } else {
            T::one()
        }
    };
    let mut iterations = 0usize;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        // projected gradient residual
        let mut pg = T::zero();
        for a in 0..m {
            let stepped = (x[a] - g[a]).max(T::zero()).min(T::one());
            pg = pg.max((x[a] - stepped).abs());
        }
        if pg <= cfg.grad_tol {
            converged = true;
            break;
        }
        // backtracking along the projected path
        let mut t = alpha.max(T::of(1e-16)).min(T::of(1e12));
        let mut accepted = false;
        let mut x_new = vec![T::zero(); m];
        let mut f_new = fx;
        for _ in 0..60 {
            for a in 0..m {
                x_new[a] = (x[a] - t * g[a]).max(T::zero()).min(T::one());
            }
            let decrease: T = (0..m).map(|a| g[a] * (x[a] - x_new[a])).sum();
            let (cand, _) = probe(&mut f, &x_new);
            if cand <= fx - cfg.armijo * decrease {
                f_new = cand;
                accepted = true;
                break;
            }
            t = t * T::of(0.5);
        }
        if !accepted {
            break; // no acceptable step: treat current point as final
        }
        let step_inf = (0..m).fold(T::zero(), |acc, a| acc.max((x_new[a] - x[a]).abs()));
        let (_, g_new) = f(&x_new);
        // BB1 step from the accepted move
        let mut sty = T::zero();
        let mut sts = T::zero();
        for a in 0..m {
            let s = x_new[a] - x[a];
            let y = g_new[a] - g[a];
            sty = sty + s * y;
            sts = sts + s * s;
        }
        alpha = if sty > T::zero() { (sts / sty).min(T::of(1e8)) } else { t * T::of(2.0) };
        x = x_new;
        fx = f_new;
        g = g_new;
        if step_inf <= cfg.step_tol {
            converged = true;
            break;
        }
    }
    SolveOutcome { x, objective: fx, iterations, converged }
}

fn probe<T, F>(f: &mut F, x: &[T]) -> (T, Vec<T>)
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    f(x)
}
