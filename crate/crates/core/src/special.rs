//! Special functions used by the optical model and estimator statistics.
//!
//! Everything here is derived from first principles (series, asymptotic
//! recurrences, continued fractions) rather than tabulated fit coefficients,
//! so the same code serves every scalar type. Accuracy is pinned by tests
//! against frozen reference values: `bessel_j1` to better than 1e-10 absolute
//! and `erf` to better than 1e-12 absolute in f64.

use crate::scalar::Scalar;

/// Bessel function of the first kind, order one.
///
/// Power series for |x| < 14, Hankel asymptotic expansion beyond.
pub fn bessel_j1<T: Scalar>(x: T) -> T {
    let ax = x.abs();
    let sign = if x < T::zero() { -T::one() } else { T::one() };
    if ax < T::of(14.0) {
        // J1(x) = (x/2) sum_k (-x^2/4)^k / (k! (k+1)!)
        let half = ax / T::of(2.0);
        let msq = -(half * half);
        let mut term = half;
        let mut sum = term;
        for k in 1..80 {
            term = term * msq / (T::of(k as f64) * T::of((k + 1) as f64));
            sum = sum + term;
            if term.abs() < sum.abs() * T::epsilon() {
                break;
            }
        }
        sign * sum
    } else {
        // J1(x) ~ sqrt(2/(pi x)) [cos(chi) P(x) - sin(chi) Q(x)],
        // chi = x - 3 pi/4, with b_m = prod_{j<=m} (4 - (2j-1)^2) / (m! 8^m):
        //   P = sum_k (-1)^k b_{2k} / x^{2k},  Q = sum_k (-1)^k b_{2k+1} / x^{2k+1}
        let mu = T::of(4.0);
        let mut b = T::one();
        let mut p = T::one();
        let mut q = T::zero();
        let inv_x = T::one() / ax;
        let mut xpow = T::one();
        let mut sign_p = T::one();
        let mut sign_q = T::one();
        for m in 1..=12 {
            let tm = T::of((2 * m - 1) as f64);
            b = b * (mu - tm * tm) / (T::of(m as f64) * T::of(8.0));
            xpow = xpow * inv_x;
            if m % 2 == 1 {
                q = q + sign_q * b * xpow;
                sign_q = -sign_q;
            } else {
                sign_p = -sign_p;
                p = p + sign_p * b * xpow;
            }
        }
        let chi = ax - T::of(3.0 * std::f64::consts::FRAC_PI_4);
        let amp = (T::of(2.0 / std::f64::consts::PI) * inv_x).sqrt();
        sign * amp * (chi.cos() * p - chi.sin() * q)
    }
}

/// First positive zero of J1, to f64 precision.
pub const J1_FIRST_ZERO: f64 = 3.831705970207513;

/// Error function.
///
/// Taylor series for |x| <= 2.5, Lentz continued fraction for erfc beyond.
pub fn erf<T: Scalar>(x: T) -> T {
    if x < T::zero() {
        return -erf(-x);
    }
    if x <= T::of(2.5) {
        // erf(x) = (2/sqrt(pi)) sum_n (-1)^n x^(2n+1) / (n! (2n+1))
        let mut u = x; // (-1)^n x^(2n+1) / n!
        let mut sum = x;
        let msq = -(x * x);
        for n in 1..120 {
            u = u * msq / T::of(n as f64);
            let term = u / T::of((2 * n + 1) as f64);
            sum = sum + term;
            if term.abs() < sum.abs() * T::epsilon() {
                break;
            }
        }
        sum * T::of(2.0 / std::f64::consts::PI.sqrt())
    } else {
        T::one() - erfc_cf(x)
    }
}

/// Complementary error function.
pub fn erfc<T: Scalar>(x: T) -> T {
    if x < T::of(-2.5) {
        T::of(2.0) - erfc_cf(-x)
    } else if x <= T::of(2.5) {
        T::one() - erf(x)
    } else {
        erfc_cf(x)
    }
}

/// erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
/// for x > 2.5, evaluated with the modified Lentz algorithm.
fn erfc_cf<T: Scalar>(x: T) -> T {
    debug_assert!(x > T::zero());
    if x > T::of(27.0) {
        return T::zero(); // below f64 underflow already
    }
    let tiny = T::of(1e-300).max(T::min_positive_value());
    let mut f = tiny;
    let mut c = f;
    let mut d = T::zero();
    for n in 0..300 {
        let (a, b) = if n == 0 {
            (T::one(), x)
        } else {
            (T::of(n as f64) / T::of(2.0), x)
        };
        d = b + a * d;
        if d == T::zero() {
            d = tiny;
        }
        c = b + a / c;
        if c == T::zero() {
            c = tiny;
        }
        d = T::one() / d;
        let delta = c * d;
        f = f * delta;
        if (delta - T::one()).abs() < T::epsilon() {
            break;
        }
    }
    (-(x * x)).exp() / T::of(std::f64::consts::PI.sqrt()) * f
}

/// Gauss-Legendre nodes and weights on [-1, 1].
///
/// Newton iteration on the Legendre recurrence; computed in f64 and lifted.
pub fn gauss_legendre<T: Scalar>(q: usize) -> (Vec<T>, Vec<T>) {
    assert!(q >= 1, "at least one quadrature node");
    let mut nodes = vec![0.0f64; q];
    let mut weights = vec![0.0f64; q];
    let n = q as f64;
    for i in 0..q.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_q(x) and derivative by recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=q {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if q == 1 { x } else { p1 };
            let pm = if q == 1 { 1.0 } else { p0 };
            dp = n * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 && q > 1 {
        nodes[q / 2] = 0.0;
    }
    (
        nodes.into_iter().map(T::of).collect(),
        weights.into_iter().map(T::of).collect(),
    )
}
