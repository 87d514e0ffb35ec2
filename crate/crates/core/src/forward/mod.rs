//! Forward model: coefficient tensors, correlation functions, detection
//! probabilities, and their analytic gradients for thermal and SPDC sources.
//!
//! The pairwise table D holds, for every detector pair (i, j) and pixel pair
//! (l, m), the kernel-weighted PSF overlap
//!
//!   thermal: D(i,j;l,m) = int int K(s,s') d_l(s') d_m(s) h(s,r_i) h(s',r_j)
//!   SPDC:    D(j,k;m1,m2) = int int Lambda(s1,s2) d_m1(s1) d_m2(s2)
//!                                 h(s1,r_j) h(s2,r_k)
//!
//! so that pairwise correlations and the two-photon amplitude are the
//! quadratic forms I_ij = sum D x_l x_m and Phi_jk = sum D x_m1 x_m2.
//! Entries are complex in the interface (the PSF phase factor is unity here,
//! so imaginary parts are zero).

use ndarray::{Array2, Array4};
use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::measurement::{DetTuple, TupleSet};
use crate::optics::{psf_eval, DetectorGrid, Dims, ImagingSystem, ObjectModel, Point};
use crate::scalar::Scalar;
use crate::source::{SourceKind, SourceModel};
use crate::special::gauss_legendre;

/// Highest supported correlation order for the thermal permutation sum.
pub const MAX_CORRELATION_ORDER: usize = 4;

/// Relative floor below which an imaginary residue in a correlation value is
/// considered roundoff.
pub const IMAG_RESIDUE_REL: f64 = 1e-10;

/// How pixel integrals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorMode {
    /// Tensor-product Gauss-Legendre with q nodes per pixel per axis.
    Quadrature { q: usize },
    /// One node at the pixel centre, weighted by the pixel area.
    SmallPixel,
}

impl TensorMode {
    /// Default: quadrature (q = 3) for 1D objects, small-pixel for 2D.
    pub fn default_for(dims: Dims) -> Self {
        match dims {
            Dims::D1(_) => TensorMode::Quadrature { q: 3 },
            Dims::D2(..) => TensorMode::SmallPixel,
        }
    }

    /// Like `default_for`, but with the quadrature order scaled to the pixel
    /// size: the PSF sweeps about pi*d/Delta_l radians across one pixel, so
    /// coarse pixels need more nodes to keep the integrals accurate.
    pub fn for_pixel_size(dims: Dims, pixel_size_um: f64, rayleigh_um: f64) -> Self {
        match dims {
            Dims::D1(_) => {
                let phase = std::f64::consts::PI * pixel_size_um / rayleigh_um;
                let q = (phase.ceil() as usize + 2).max(3);
                TensorMode::Quadrature { q }
            }
            Dims::D2(..) => TensorMode::SmallPixel,
        }
    }
}

/// Quadrature nodes grouped by pixel.
struct NodeGrid<T> {
    pos: Vec<Point<T>>,
    weight: Vec<T>,
    /// node index range of each pixel
    ranges: Vec<std::ops::Range<usize>>,
}

impl<T: Scalar> NodeGrid<T> {
    fn build(obj: &ObjectModel<T>, mode: TensorMode) -> Self {
        let m = obj.len();
        let d = obj.pixel_size_um;
        let mut pos = Vec::new();
        let mut weight = Vec::new();
        let mut ranges = Vec::with_capacity(m);
        match mode {
            TensorMode::SmallPixel => {
                let sigma = obj.pixel_area();
                for j in 0..m {
                    let start = pos.len();
                    pos.push(obj.pixel_center(j));
                    weight.push(sigma);
                    ranges.push(start..pos.len());
                }
            }
            TensorMode::Quadrature { q } => {
                let (t, w) = gauss_legendre::<T>(q);
                let half = d / T::of(2.0);
                for j in 0..m {
                    let start = pos.len();
                    let c = obj.pixel_center(j);
                    match obj.dims {
                        Dims::D1(_) => {
                            for a in 0..q {
                                pos.push([c[0] + half * t[a], c[1]]);
                                weight.push(half * w[a]);
                            }
                        }
                        Dims::D2(..) => {
                            for ay in 0..q {
                                for ax in 0..q {
                                    pos.push([c[0] + half * t[ax], c[1] + half * t[ay]]);
                                    weight.push(half * w[ax] * half * w[ay]);
                                }
                            }
                        }
                    }
                    ranges.push(start..pos.len());
                }
            }
        }
        Self { pos, weight, ranges }
    }
}

/// Precomputed pairwise coefficient table for one (geometry, source,
/// pixelization). Index order: `[det_i, det_j, pix_l, pix_m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor<T> {
    pub source_kind: SourceKind,
    pub mode: TensorMode,
    pub n_det: usize,
    pub n_pix: usize,
    data: Array4<Complex<T>>,
}

impl<T: Scalar> CoefficientTensor<T> {
    /// Build the table. Parallel over detector rows; the result is identical
    /// for any worker count.
    pub fn build(
        obj: &ObjectModel<T>,
        sys: &ImagingSystem<T>,
        src: &SourceModel<T>,
        det: &DetectorGrid<T>,
        mode: TensorMode,
    ) -> Result<Self> {
        if let TensorMode::Quadrature { q } = mode {
            if q == 0 {
                return Err(CoreError::InvalidParameter("quadrature order must be >= 1".into()));
            }
        }
        let nodes = NodeGrid::build(obj, mode);
        let n_nodes = nodes.pos.len();
        let nd = det.len();
        let np = obj.len();

        // weighted PSF table: wh[a][i] = w_a * h(node_a, r_i)
        let mut wh = Array2::<T>::zeros((n_nodes, nd));
        for a in 0..n_nodes {
            for i in 0..nd {
                wh[[a, i]] = nodes.weight[a] * psf_eval(nodes.pos[a], det.point(i), sys);
            }
        }
        // kernel table over nodes
        let mut kk = Array2::<T>::zeros((n_nodes, n_nodes));
        for a in 0..n_nodes {
            for b in 0..n_nodes {
                let dx = nodes.pos[a][0] - nodes.pos[b][0];
                let dy = nodes.pos[a][1] - nodes.pos[b][1];
                kk[[a, b]] = src.kernel(dx * dx + dy * dy);
            }
        }

        // D[i,j,l,m] = sum_{a in m} sum_{b in l} K[a,b] wh[a,i] wh[b,j]
        let mut flat = vec![Complex::new(T::zero(), T::zero()); nd * nd * np * np];
        flat.par_chunks_mut(nd * np * np)
            .enumerate()
            .for_each(|(i, chunk)| {
                for j in 0..nd {
                    for l in 0..np {
                        for m in 0..np {
                            let mut acc = T::zero();
                            for a in nodes.ranges[m].clone() {
                                let whai = wh[[a, i]];
                                if whai == T::zero() {
                                    continue;
                                }
                                let mut inner = T::zero();
                                for b in nodes.ranges[l].clone() {
                                    inner = inner + kk[[a, b]] * wh[[b, j]];
                                }
                                acc = acc + whai * inner;
                            }
                            chunk[j * np * np + l * np + m] = Complex::new(acc, T::zero());
                        }
                    }
                }
            });
        let data = Array4::from_shape_vec((nd, nd, np, np), flat)
            .expect("shape consistent by construction");
        Ok(Self {
            source_kind: src.kind(),
            mode,
            n_det: nd,
            n_pix: np,
            data,
        })
    }

    pub fn from_raw(
        source_kind: SourceKind,
        mode: TensorMode,
        n_det: usize,
        n_pix: usize,
        entries: Vec<Complex<T>>,
    ) -> Result<Self> {
        let data = Array4::from_shape_vec((n_det, n_det, n_pix, n_pix), entries)
            .map_err(|e| CoreError::Format(format!("tensor shape: {e}")))?;
        Ok(Self { source_kind, mode, n_det, n_pix, data })
    }

    pub fn entry(&self, i: usize, j: usize, l: usize, m: usize) -> Complex<T> {
        self.data[[i, j, l, m]]
    }

    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize, usize, usize), &Complex<T>)> {
        self.data.indexed_iter()
    }

    /// Quadratic form sum_{l,m} D(i,j;l,m) x_l x_m over an explicit pixel
    /// subset (pixels outside the subset count as zero transmission).
    pub fn quadratic_form(&self, i: usize, j: usize, pixels: &[usize], values: &[T]) -> Complex<T> {
        let mut acc = Complex::new(T::zero(), T::zero());
        for (wl, &l) in pixels.iter().enumerate() {
            let xl = values[wl];
            if xl == T::zero() {
                continue;
            }
            for (wm, &m) in pixels.iter().enumerate() {
                let xm = values[wm];
                if xm == T::zero() {
                    continue;
                }
                acc = acc + self.data[[i, j, l, m]] * (xl * xm);
            }
        }
        acc
    }

    /// d/dx_(pixels[a]) of the quadratic form, written into `out` (length =
    /// pixels.len()).
    pub fn quadratic_form_grad(
        &self,
        i: usize,
        j: usize,
        pixels: &[usize],
        values: &[T],
        out: &mut [Complex<T>],
    ) {
        for (wa, &a) in pixels.iter().enumerate() {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (wl, &l) in pixels.iter().enumerate() {
                let xl = values[wl];
                if xl == T::zero() {
                    continue;
                }
                acc = acc + (self.data[[i, j, l, a]] + self.data[[i, j, a, l]]) * xl;
            }
            out[wa] = acc;
        }
    }
}

/// Pairwise thermal coefficient (errors if the tensor was built for SPDC).
pub fn thermal_pair_coeff<T: Scalar>(
    tensor: &CoefficientTensor<T>,
    i: usize,
    j: usize,
    l: usize,
    m: usize,
) -> Result<Complex<T>> {
    if tensor.source_kind != SourceKind::Thermal {
        return Err(CoreError::SourceMismatch { expected: "thermal", got: tensor.source_kind.name() });
    }
    Ok(tensor.entry(i, j, l, m))
}

/// Pairwise SPDC amplitude coefficient (errors if the tensor is thermal).
pub fn spdc_pair_coeff<T: Scalar>(
    tensor: &CoefficientTensor<T>,
    j: usize,
    k: usize,
    m1: usize,
    m2: usize,
) -> Result<Complex<T>> {
    if tensor.source_kind != SourceKind::Spdc {
        return Err(CoreError::SourceMismatch { expected: "spdc", got: tensor.source_kind.name() });
    }
    Ok(tensor.entry(j, k, m1, m2))
}

/// Pairwise correlation I_ij = sum_{l,m} D(i,j;l,m) x_l x_m.
pub fn thermal_pair_correlation<T: Scalar>(
    tensor: &CoefficientTensor<T>,
    i: usize,
    j: usize,
    x: &[T],
) -> Result<Complex<T>> {
    if tensor.source_kind != SourceKind::Thermal {
        return Err(CoreError::SourceMismatch { expected: "thermal", got: tensor.source_kind.name() });
    }
    let pixels: Vec<usize> = (0..tensor.n_pix).collect();
    Ok(tensor.quadratic_form(i, j, &pixels, x))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    use itertools::Itertools;
    (0..n).permutations(n).collect()
}

/// n-th order thermal correlation at a detector tuple: the permutation sum
/// over pairwise correlations. Real and clamped to >= 0; the imaginary
/// residue must be roundoff-small.
pub fn gn_thermal<T: Scalar>(
    tensor: &CoefficientTensor<T>,
    tuple: &DetTuple,
    x: &[T],
) -> Result<T> {
    if tensor.source_kind != SourceKind::Thermal {
        return Err(CoreError::SourceMismatch { expected: "thermal", got: tensor.source_kind.name() });
    }
    let n = tuple.len();
    if n == 0 || n > MAX_CORRELATION_ORDER {
        return Err(CoreError::InvalidParameter(format!(
            "correlation order {n} outside 1..={MAX_CORRELATION_ORDER}"
        )));
    }
    let pixels: Vec<usize> = (0..tensor.n_pix).collect();
    let mut cache = Array2::<Complex<T>>::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            cache[[a, b]] = tensor.quadratic_form(tuple[a], tuple[b], &pixels, x);
        }
    }
    Ok(permanent_value(&cache, n))
}

/// Permutation sum of I products with the reality check/clamp shared by the
/// full-model path.
fn permanent_value<T: Scalar>(cache: &Array2<Complex<T>>, n: usize) -> T {
    let mut total = Complex::new(T::zero(), T::zero());
    for perm in permutations(n) {
        let mut prod = Complex::new(T::one(), T::zero());
        for (a, &pa) in perm.iter().enumerate() {
            prod = prod * cache[[a, pa]];
        }
        total = total + prod;
    }
    let scale = total.norm_sqr().sqrt();
    debug_assert!(
        total.im.abs() <= T::of(IMAG_RESIDUE_REL) * scale.max(T::min_positive_value()),
        "imaginary residue beyond roundoff"
    );
    total.re.max(T::zero())
}

/// SPDC coincidence probability (up to the global normalization):
/// |Phi(r_j, r_k)|^2 with Phi the two-photon amplitude quadratic form.
pub fn spdc_probability<T: Scalar>(
    tensor: &CoefficientTensor<T>,
    j: usize,
    k: usize,
    x: &[T],
) -> Result<T> {
    if tensor.source_kind != SourceKind::Spdc {
        return Err(CoreError::SourceMismatch { expected: "spdc", got: tensor.source_kind.name() });
    }
    let pixels: Vec<usize> = (0..tensor.n_pix).collect();
    let phi = tensor.quadratic_form(j, k, &pixels, x);
    Ok(phi.norm_sqr())
}

/// Normalize raw outcome weights by the fully-transparent reference:
/// P_S = sum raw(x==1), pbar_k = raw_k / P_S, P_0 completes the set.
pub fn normalize_probabilities<T: Scalar>(raw_x: &[T], raw_ones: &[T]) -> Result<(Vec<T>, T)> {
    if raw_x.len() != raw_ones.len() {
        return Err(CoreError::InvalidParameter("raw probability length mismatch".into()));
    }
    for (k, &v) in raw_x.iter().enumerate() {
        if v < T::zero() || !v.is_finite() {
            return Err(CoreError::NegativeProbability { index: k, value: v.to_f64_lossy() });
        }
    }
    let p_s: T = raw_ones.iter().copied().sum();
    if !(p_s > T::zero()) {
        return Err(CoreError::Degenerate("transparent-object probability sum is zero".into()));
    }
    let pbar: Vec<T> = raw_x.iter().map(|&v| v / p_s).collect();
    let sum: T = pbar.iter().copied().sum();
    let p0 = T::one() - sum;
    if p0 < -T::of(1e-9) {
        return Err(CoreError::Degenerate(format!(
            "no-counts probability is negative ({p0}); monotonicity assumption broken"
        )));
    }
    Ok((pbar, p0.max(T::zero())))
}

/// Full-object model over a tuple set, with the transparent-object
/// normalization frozen at construction.
#[derive(Debug, Clone)]
pub struct ForwardModel<'a, T> {
    pub tensor: &'a CoefficientTensor<T>,
    pub tuples: &'a TupleSet,
    p_s: T,
}

impl<'a, T: Scalar> ForwardModel<'a, T> {
    pub fn new(tensor: &'a CoefficientTensor<T>, tuples: &'a TupleSet) -> Result<Self> {
        if tensor.source_kind == SourceKind::Spdc && tuples.order != 2 {
            return Err(CoreError::InvalidParameter(
                "SPDC coincidence model is second order".into(),
            ));
        }
        if tensor.source_kind == SourceKind::Thermal && tuples.order > MAX_CORRELATION_ORDER {
            return Err(CoreError::InvalidParameter(format!(
                "correlation order {} above cap {MAX_CORRELATION_ORDER}",
                tuples.order
            )));
        }
        let ones = vec![T::one(); tensor.n_pix];
        let raw = raw_all(tensor, tuples, &ones);
        let p_s: T = raw.iter().copied().sum();
        if !(p_s > T::zero()) {
            return Err(CoreError::Degenerate("transparent-object probability sum is zero".into()));
        }
        Ok(Self { tensor, tuples, p_s })
    }

    pub fn p_s(&self) -> T {
        self.p_s
    }

    /// Raw (unnormalized) outcome weights at the given transmissions.
    pub fn raw_probabilities(&self, x: &[T]) -> Vec<T> {
        raw_all(self.tensor, self.tuples, x)
    }

    /// Normalized probabilities and the no-counts completion.
    pub fn probabilities(&self, x: &[T]) -> Result<(Vec<T>, T)> {
        let raw = self.raw_probabilities(x);
        for (k, &v) in raw.iter().enumerate() {
            if v < T::zero() || !v.is_finite() {
                return Err(CoreError::NegativeProbability { index: k, value: v.to_f64_lossy() });
            }
        }
        let pbar: Vec<T> = raw.iter().map(|&v| v / self.p_s).collect();
        let sum: T = pbar.iter().copied().sum();
        let p0 = T::one() - sum;
        if p0 < -T::of(1e-9) {
            return Err(CoreError::Degenerate(format!(
                "no-counts probability is negative ({p0})"
            )));
        }
        Ok((pbar, p0.max(T::zero())))
    }

    /// Analytic gradients of every normalized probability and of P_0.
    /// Row k of the matrix is d pbar_k / d x; the vector is d P_0 / d x.
    pub fn gradients(&self, x: &[T]) -> (Array2<T>, Vec<T>) {
        let np = self.tensor.n_pix;
        let pixels: Vec<usize> = (0..np).collect();
        let kq = self.tuples.len();
        let rows: Vec<Vec<T>> = (0..kq)
            .into_par_iter()
            .map(|k| {
                let mut g = vec![T::zero(); np];
                raw_gradient(self.tensor, self.tuples.tuple(k), &pixels, x, &mut g);
                for v in &mut g {
                    *v = *v / self.p_s;
                }
                g
            })
            .collect();
        let mut grad = Array2::<T>::zeros((kq, np));
        let mut grad_p0 = vec![T::zero(); np];
        for (k, row) in rows.into_iter().enumerate() {
            for (a, v) in row.into_iter().enumerate() {
                grad[[k, a]] = v;
                grad_p0[a] = grad_p0[a] - v;
            }
        }
        (grad, grad_p0)
    }
}

fn raw_all<T: Scalar>(tensor: &CoefficientTensor<T>, tuples: &TupleSet, x: &[T]) -> Vec<T> {
    (0..tuples.len())
        .into_par_iter()
        .map(|k| raw_one(tensor, tuples.tuple(k), x))
        .collect()
}

pub(crate) fn raw_one<T: Scalar>(tensor: &CoefficientTensor<T>, tuple: &DetTuple, x: &[T]) -> T {
    let pixels: Vec<usize> = (0..tensor.n_pix).collect();
    raw_one_restricted(tensor, tuple, &pixels, x)
}

/// Raw outcome weight with the object restricted to an explicit pixel subset.
pub(crate) fn raw_one_restricted<T: Scalar>(
    tensor: &CoefficientTensor<T>,
    tuple: &DetTuple,
    pixels: &[usize],
    values: &[T],
) -> T {
    match tensor.source_kind {
        SourceKind::Thermal => {
            let n = tuple.len();
            let mut cache = Array2::<Complex<T>>::zeros((n, n));
            for a in 0..n {
                for b in 0..n {
                    cache[[a, b]] = tensor.quadratic_form(tuple[a], tuple[b], pixels, values);
                }
            }
            permanent_value(&cache, n)
        }
        SourceKind::Spdc => {
            let phi = tensor.quadratic_form(tuple[0], tuple[1], pixels, values);
            phi.norm_sqr()
        }
    }
}

/// d raw / d values[a] over the pixel subset, accumulated into `out`.
pub(crate) fn raw_gradient<T: Scalar>(
    tensor: &CoefficientTensor<T>,
    tuple: &DetTuple,
    pixels: &[usize],
    values: &[T],
    out: &mut [T],
) {
    let w = pixels.len();
    match tensor.source_kind {
        SourceKind::Thermal => {
            let n = tuple.len();
            let mut cache = Array2::<Complex<T>>::zeros((n, n));
            let mut dcache = vec![Complex::new(T::zero(), T::zero()); n * n * w];
            for a in 0..n {
                for b in 0..n {
                    cache[[a, b]] = tensor.quadratic_form(tuple[a], tuple[b], pixels, values);
                    tensor.quadratic_form_grad(
                        tuple[a],
                        tuple[b],
                        pixels,
                        values,
                        &mut dcache[(a * n + b) * w..(a * n + b + 1) * w],
                    );
                }
            }
            for perm in permutations(n) {
                // product over the permutation and its per-factor derivative
                for pos in 0..n {
                    let mut prefix = Complex::new(T::one(), T::zero());
                    for (a, &pa) in perm.iter().enumerate() {
                        if a != pos {
                            prefix = prefix * cache[[a, pa]];
                        }
                    }
                    let slice = &dcache[(pos * n + perm[pos]) * w..(pos * n + perm[pos] + 1) * w];
                    for (t, dv) in slice.iter().enumerate() {
                        out[t] = out[t] + (prefix * *dv).re;
                    }
                }
            }
        }
        SourceKind::Spdc => {
            let phi = tensor.quadratic_form(tuple[0], tuple[1], pixels, values);
            let mut dphi = vec![Complex::new(T::zero(), T::zero()); w];
            tensor.quadratic_form_grad(tuple[0], tuple[1], pixels, values, &mut dphi);
            for t in 0..w {
                // d |phi|^2 = 2 Re(conj(phi) dphi)
                out[t] = out[t] + T::of(2.0) * (phi.conj() * dphi[t]).re;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{DetectorGrid, Dims, ImagingSystem, ObjectModel};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn setup(
        m: usize,
        d_um: f64,
        w_c: f64,
        kind: SourceKind,
        mode: TensorMode,
    ) -> (ObjectModel<f64>, ImagingSystem<f64>, SourceModel<f64>, DetectorGrid<f64>, CoefficientTensor<f64>) {
        let sys = ImagingSystem::new(234.0, 454.0, 0.85, 405.0).unwrap();
        let obj = ObjectModel::centered(Dims::D1(m), d_um, vec![1.0; m]).unwrap();
        let src = match kind {
            SourceKind::Thermal => SourceModel::thermal(w_c).unwrap(),
            SourceKind::Spdc => SourceModel::spdc(w_c).unwrap(),
        };
        let det = DetectorGrid::covering(&obj, &sys, 2.0 * sys.rayleigh_width_um(), 44.64).unwrap();
        let tensor = CoefficientTensor::build(&obj, &sys, &src, &det, mode).unwrap();
        (obj, sys, src, det, tensor)
    }

    #[test]
    fn small_pixel_coeff_closed_form() {
        let (obj, sys, src, det, tensor) =
            setup(6, 27.0, 35.0, SourceKind::Thermal, TensorMode::SmallPixel);
        let sigma = obj.pixel_area();
        // D(i,j;l,m) = sigma^2 K(s_l, s_m) h(s_m, r_i) h(s_l, r_j)
        for (i, j, l, m) in [(0, 1, 2, 3), (2, 2, 1, 1), (1, 4, 0, 5)] {
            let sl = obj.pixel_center(l);
            let sm = obj.pixel_center(m);
            let dx = sl[0] - sm[0];
            let want = sigma
                * sigma
                * src.kernel(dx * dx)
                * psf_eval(sm, det.point(i), &sys)
                * psf_eval(sl, det.point(j), &sys);
            let got = thermal_pair_coeff(&tensor, i, j, l, m).unwrap();
            assert_relative_eq!(got.re, want, max_relative = 1e-12);
            assert_eq!(got.im, 0.0);
        }
    }

    #[test]
    fn small_pixel_equal_indices_drop_kernel() {
        let (obj, sys, _, det, tensor) =
            setup(6, 27.0, 35.0, SourceKind::Thermal, TensorMode::SmallPixel);
        let sigma = obj.pixel_area();
        let l = 3usize;
        let sl = obj.pixel_center(l);
        let want = sigma * sigma * psf_eval(sl, det.point(2), &sys) * psf_eval(sl, det.point(5), &sys);
        let got = thermal_pair_coeff(&tensor, 2, 5, l, l).unwrap();
        assert_relative_eq!(got.re, want, max_relative = 1e-12);
    }

    #[test]
    fn kernel_factor_at_one_width() {
        // pixels exactly w_c apart pick up a factor e^-1 relative to the
        // same-pixel geometric part
        let d = 30.0;
        let (obj, sys, _, det, tensor) = setup(4, d, d, SourceKind::Thermal, TensorMode::SmallPixel);
        let (l, m) = (1usize, 2usize); // separation d = w_c
        let got = thermal_pair_coeff(&tensor, 0, 3, l, m).unwrap().re;
        let sigma = obj.pixel_area();
        let geom = sigma
            * sigma
            * psf_eval(obj.pixel_center(m), det.point(0), &sys)
            * psf_eval(obj.pixel_center(l), det.point(3), &sys);
        assert_relative_eq!(got / geom, (-1.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn far_pixel_coefficient_is_tiny() {
        // |s_m + r_i s_o/s_i| = 10 Dl makes the PSF factor < 1e-2 of peak
        let sys = ImagingSystem::new(234.0, 454.0, 0.85, 405.0).unwrap();
        let dl = sys.rayleigh_width_um();
        let h: f64 = psf_eval([10.0 * dl, 0.0], [0.0, 0.0], &sys);
        assert!(h.abs() < 1e-2);
    }

    #[test]
    fn source_kind_mismatch_rejected() {
        let (_, _, _, _, tensor) = setup(4, 27.0, 30.0, SourceKind::Thermal, TensorMode::SmallPixel);
        assert!(spdc_pair_coeff(&tensor, 0, 0, 0, 0).is_err());
        let (_, _, _, _, spdc) = setup(4, 27.0, 30.0, SourceKind::Spdc, TensorMode::SmallPixel);
        assert!(thermal_pair_coeff(&spdc, 0, 0, 0, 0).is_err());
        assert!(gn_thermal(&spdc, &vec![0, 1], &[1.0; 4]).is_err());
        assert!(spdc_probability(&tensor, 0, 1, &[1.0; 4]).is_err());
    }

    #[test]
    fn hermitian_pairing_of_the_table() {
        let (_, _, _, _, tensor) = setup(5, 27.0, 35.0, SourceKind::Thermal, TensorMode::Quadrature { q: 3 });
        for i in 0..tensor.n_det.min(4) {
            for j in 0..tensor.n_det.min(4) {
                for l in 0..5 {
                    for m in 0..5 {
                        let a = tensor.entry(i, j, l, m);
                        let b = tensor.entry(j, i, m, l).conj();
                        assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-12);
                        assert_abs_diff_eq!(a.im, -(-b.im), epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn correlation_zero_and_single_pixel() {
        let (_, _, _, _, tensor) = setup(5, 27.0, 35.0, SourceKind::Thermal, TensorMode::SmallPixel);
        let zeros = vec![0.0; 5];
        let i0 = thermal_pair_correlation(&tensor, 0, 1, &zeros).unwrap();
        assert_eq!(i0.re, 0.0);
        let mut e1 = vec![0.0; 5];
        e1[1] = 1.0;
        let got = thermal_pair_correlation(&tensor, 0, 1, &e1).unwrap();
        let want = tensor.entry(0, 1, 1, 1);
        assert_relative_eq!(got.re, want.re, max_relative = 1e-13);
    }

    #[test]
    fn diagonal_correlation_nonnegative() {
        let (_, _, _, _, tensor) = setup(6, 27.0, 40.0, SourceKind::Thermal, TensorMode::Quadrature { q: 3 });
        let x: Vec<f64> = (0..6).map(|i| 0.1 + 0.15 * i as f64).collect();
        for i in 0..tensor.n_det {
            let v = thermal_pair_correlation(&tensor, i, i, &x).unwrap();
            assert!(v.re >= -1e-14, "I_ii must be nonnegative, got {}", v.re);
        }
    }

    #[test]
    fn gn_low_orders_match_pair_formulas() {
        let (_, _, _, _, tensor) = setup(6, 27.0, 40.0, SourceKind::Thermal, TensorMode::SmallPixel);
        let x: Vec<f64> = (0..6).map(|i| 0.2 + 0.1 * i as f64).collect();
        // n = 1: single permutation, I(r, r)
        let g1 = gn_thermal(&tensor, &vec![3], &x).unwrap();
        let i33 = thermal_pair_correlation(&tensor, 3, 3, &x).unwrap().re;
        assert_relative_eq!(g1, i33, max_relative = 1e-13);
        // n = 2: I11 I22 + I12 I21
        let g2 = gn_thermal(&tensor, &vec![2, 4], &x).unwrap();
        let i22 = thermal_pair_correlation(&tensor, 2, 2, &x).unwrap().re;
        let i44 = thermal_pair_correlation(&tensor, 4, 4, &x).unwrap().re;
        let i24 = thermal_pair_correlation(&tensor, 2, 4, &x).unwrap().re;
        let i42 = thermal_pair_correlation(&tensor, 4, 2, &x).unwrap().re;
        assert_relative_eq!(g2, i22 * i44 + i24 * i42, max_relative = 1e-12);
        // coincident points: G2(r, r) = 2 [G1(r)]^2
        let g2rr = gn_thermal(&tensor, &vec![3, 3], &x).unwrap();
        assert_relative_eq!(g2rr, 2.0 * i33 * i33, max_relative = 1e-12);
    }

    #[test]
    fn gn_exchange_symmetric_and_capped() {
        let (_, _, _, _, tensor) = setup(6, 27.0, 40.0, SourceKind::Thermal, TensorMode::SmallPixel);
        let x: Vec<f64> = (0..6).map(|i| 0.2 + 0.1 * i as f64).collect();
        let a = gn_thermal(&tensor, &vec![1, 3, 5], &x).unwrap();
        let b = gn_thermal(&tensor, &vec![5, 1, 3], &x).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
        assert!(gn_thermal(&tensor, &vec![0, 1, 2, 3, 4], &x).is_err());
    }

    #[test]
    fn spdc_probability_symmetric_and_zero() {
        let (_, _, _, _, tensor) = setup(6, 27.0, 30.0, SourceKind::Spdc, TensorMode::SmallPixel);
        let zeros = vec![0.0; 6];
        assert_eq!(spdc_probability(&tensor, 0, 1, &zeros).unwrap(), 0.0);
        let x: Vec<f64> = (0..6).map(|i| 0.2 + 0.12 * i as f64).collect();
        let a = spdc_probability(&tensor, 1, 4, &x).unwrap();
        let b = spdc_probability(&tensor, 4, 1, &x).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn spdc_delta_limit_diagonalizes() {
        // w_c -> 0 in small-pixel mode: off-diagonal amplitude coefficients
        // vanish, diagonals stay proportional to h h.
        let (obj, sys, _, det, tensor) = setup(5, 27.0, 1e-3, SourceKind::Spdc, TensorMode::SmallPixel);
        let peak = tensor.entry(1, 2, 2, 2).re.abs().max(1e-30);
        for m1 in 0..5 {
            for m2 in 0..5 {
                if m1 != m2 {
                    assert!(tensor.entry(1, 2, m1, m2).re.abs() < 1e-12 * peak);
                }
            }
        }
        let sigma = obj.pixel_area();
        let m = 2usize;
        let want = sigma * sigma
            * psf_eval(obj.pixel_center(m), det.point(1), &sys)
            * psf_eval(obj.pixel_center(m), det.point(2), &sys);
        assert_relative_eq!(tensor.entry(1, 2, m, m).re, want, max_relative = 1e-9);
    }

    #[test]
    fn normalization_properties() {
        let (_, _, _, _, tensor) = setup(6, 27.0, 40.0, SourceKind::Thermal, TensorMode::SmallPixel);
        let det_n = tensor.n_det;
        let det = DetectorGrid::<f64>::centered(Dims::D1(det_n), 44.64).unwrap();
        let tuples = TupleSet::build(&det, 2, 250.0).unwrap();
        let model = ForwardModel::new(&tensor, &tuples).unwrap();
        // x = 1: P0 = 0, sum pbar = 1
        let (pbar, p0) = model.probabilities(&vec![1.0; 6]).unwrap();
        assert_abs_diff_eq!(pbar.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p0, 0.0, epsilon = 1e-12);
        // x = 0: all pbar zero, P0 = 1
        let (pbar, p0) = model.probabilities(&vec![0.0; 6]).unwrap();
        assert!(pbar.iter().all(|&p| p == 0.0));
        assert_abs_diff_eq!(p0, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_rejects_degenerate_reference() {
        let raw = vec![0.0, 0.0];
        assert!(normalize_probabilities(&raw, &raw).is_err());
        assert!(normalize_probabilities(&[0.5, -0.1], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn quadrature_close_to_refined_quadrature() {
        // q=3 agrees with a q=6 reference within 1e-4 relative in the
        // Frobenius norm (w_c ~ pixel scale); individual far-tail entries
        // where the PSF oscillates within a pixel converge more slowly
        let (_, _, _, _, coarse) = setup(5, 27.0, 35.0, SourceKind::Spdc, TensorMode::Quadrature { q: 3 });
        let (_, _, _, _, fine) = setup(5, 27.0, 35.0, SourceKind::Spdc, TensorMode::Quadrature { q: 6 });
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (idx, v) in coarse.entries() {
            let w: f64 = fine.entry(idx.0, idx.1, idx.2, idx.3).re;
            num += (v.re - w) * (v.re - w);
            den += w * w;
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-4, "normwise quadrature deviation {rel}");
    }

    #[test]
    fn swapping_spdc_legs_is_symmetric() {
        let (_, _, _, _, tensor) = setup(5, 27.0, 30.0, SourceKind::Spdc, TensorMode::Quadrature { q: 3 });
        for (j, k, m1, m2) in [(0, 3, 1, 4), (2, 2, 0, 3)] {
            let a = spdc_pair_coeff(&tensor, j, k, m1, m2).unwrap();
            let b = spdc_pair_coeff(&tensor, k, j, m2, m1).unwrap();
            assert_relative_eq!(a.re, b.re, max_relative = 1e-12);
        }
    }
}
