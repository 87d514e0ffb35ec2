//! Imaging geometry, the jinc point-spread function, and the pixelated
//! object representation shared by every other module.
//!
//! All lengths are micrometres internally; constructors take the units the
//! lab would quote (mm for distances and lens radius, nm for wavelength) and
//! convert at the boundary.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::special::bessel_j1;

/// A point in the object or image plane, micrometres. 1D geometries put the
/// coordinate in `[0]` and keep `[1]` at zero.
pub type Point<T> = [T; 2];

/// Grid dimensions: a line of M pixels or an Mx x My raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    D1(usize),
    D2(usize, usize),
}

impl Dims {
    pub fn len(&self) -> usize {
        match *self {
            Dims::D1(m) => m,
            Dims::D2(mx, my) => mx * my,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_1d(&self) -> bool {
        matches!(self, Dims::D1(_))
    }

    /// (ix, iy) of a linear index; row-major with x fastest.
    pub fn unravel(&self, idx: usize) -> (usize, usize) {
        match *self {
            Dims::D1(_) => (idx, 0),
            Dims::D2(mx, _) => (idx % mx, idx / mx),
        }
    }
}

/// Single-lens imaging geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagingSystem<T> {
    object_distance_um: T,
    image_distance_um: T,
    lens_radius_um: T,
    wavelength_um: T,
}

impl<T: Scalar> ImagingSystem<T> {
    /// Distances and lens radius in mm, wavelength in nm.
    pub fn new(s_o_mm: T, s_i_mm: T, r_mm: T, lambda_nm: T) -> Result<Self> {
        let pos = [s_o_mm, s_i_mm, r_mm, lambda_nm];
        if pos.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(CoreError::InvalidParameter(
                "imaging system requires s_o, s_i, R, lambda all positive".into(),
            ));
        }
        let mm = T::of(1e3);
        Ok(Self {
            object_distance_um: s_o_mm * mm,
            image_distance_um: s_i_mm * mm,
            lens_radius_um: r_mm * mm,
            wavelength_um: lambda_nm * T::of(1e-3),
        })
    }

    pub fn object_distance_um(&self) -> T {
        self.object_distance_um
    }

    pub fn image_distance_um(&self) -> T {
        self.image_distance_um
    }

    pub fn lens_radius_um(&self) -> T {
        self.lens_radius_um
    }

    pub fn wavelength_um(&self) -> T {
        self.wavelength_um
    }

    /// m = s_i / s_o.
    pub fn magnification(&self) -> T {
        self.image_distance_um / self.object_distance_um
    }

    /// Rayleigh width Delta_l = s_o * lambda / (2R), micrometres.
    pub fn rayleigh_width_um(&self) -> T {
        self.object_distance_um * self.wavelength_um / (T::of(2.0) * self.lens_radius_um)
    }

    /// Object-plane point conjugate to an image-plane point: -r / m.
    pub fn conjugate_point(&self, r: Point<T>) -> Point<T> {
        let inv_m = self.object_distance_um / self.image_distance_um;
        [-r[0] * inv_m, -r[1] * inv_m]
    }
}

/// Amplitude PSF h0(x) = 2 J1(x)/x with x = pi |s + r s_o/s_i| / Delta_l.
/// The quadratic phase factor is dropped (unit modulus approximation), so the
/// PSF is real.
pub fn psf_eval<T: Scalar>(s: Point<T>, r: Point<T>, sys: &ImagingSystem<T>) -> T {
    let c = sys.conjugate_point(r);
    let dx = s[0] - c[0];
    let dy = s[1] - c[1];
    let dist = (dx * dx + dy * dy).sqrt();
    jinc(T::of(std::f64::consts::PI) * dist / sys.rayleigh_width_um())
}

/// 2 J1(x)/x, continuous at zero.
pub fn jinc<T: Scalar>(x: T) -> T {
    let ax = x.abs();
    if ax < T::of(1e-6) {
        // 2 J1(x)/x = 1 - x^2/8 + O(x^4)
        T::one() - x * x / T::of(8.0)
    } else {
        T::of(2.0) * bessel_j1(ax) / ax
    }
}

/// Pixelated transmission object. Pixels are axis-aligned unit top-hats of
/// side `pixel_size_um`; `origin_um` is the centre of pixel (0, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel<T> {
    pub dims: Dims,
    pub pixel_size_um: T,
    pub origin_um: Point<T>,
    transmissions: Vec<T>,
}

impl<T: Scalar> ObjectModel<T> {
    pub fn new(dims: Dims, pixel_size_um: T, origin_um: Point<T>, x: Vec<T>) -> Result<Self> {
        if !(pixel_size_um > T::zero()) {
            return Err(CoreError::InvalidParameter("pixel size must be positive".into()));
        }
        if x.len() != dims.len() || dims.is_empty() {
            return Err(CoreError::InvalidParameter(format!(
                "transmission vector length {} does not match dims {:?}",
                x.len(),
                dims
            )));
        }
        if x.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(CoreError::InvalidParameter(
                "transmissions must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            dims,
            pixel_size_um,
            origin_um,
            transmissions: x,
        })
    }

    /// Grid centred on the optical axis.
    pub fn centered(dims: Dims, pixel_size_um: T, x: Vec<T>) -> Result<Self> {
        let half = |n: usize| T::of((n as f64 - 1.0) / 2.0) * pixel_size_um;
        let origin = match dims {
            Dims::D1(m) => [-half(m), T::zero()],
            Dims::D2(mx, my) => [-half(mx), -half(my)],
        };
        Self::new(dims, pixel_size_um, origin, x)
    }

    pub fn len(&self) -> usize {
        self.transmissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transmissions.is_empty()
    }

    pub fn transmissions(&self) -> &[T] {
        &self.transmissions
    }

    pub fn set_transmissions(&mut self, x: Vec<T>) -> Result<()> {
        if x.len() != self.len() {
            return Err(CoreError::InvalidParameter("length mismatch".into()));
        }
        self.transmissions = x;
        Ok(())
    }

    /// Centre of pixel `idx`.
    pub fn pixel_center(&self, idx: usize) -> Point<T> {
        let (ix, iy) = self.dims.unravel(idx);
        [
            self.origin_um[0] + T::of(ix as f64) * self.pixel_size_um,
            self.origin_um[1] + T::of(iy as f64) * self.pixel_size_um,
        ]
    }

    /// Pixel area sigma: d for 1D strips, d^2 for 2D squares.
    pub fn pixel_area(&self) -> T {
        match self.dims {
            Dims::D1(_) => self.pixel_size_um,
            Dims::D2(..) => self.pixel_size_um * self.pixel_size_um,
        }
    }

    /// Object extent [min, max] along x of pixel centres, padded by half a pixel.
    pub fn span_um(&self) -> (T, T) {
        let half = self.pixel_size_um / T::of(2.0);
        let (mx, _) = match self.dims {
            Dims::D1(m) => (m, 1),
            Dims::D2(a, b) => (a, b),
        };
        let lo = self.origin_um[0] - half;
        let hi = self.origin_um[0] + T::of((mx - 1) as f64) * self.pixel_size_um + half;
        (lo, hi)
    }

    /// Split every pixel into `factor` children per axis; children inherit the
    /// parent transmission, so total transmitting area is preserved.
    pub fn subdivide(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(CoreError::InvalidParameter("subdivision factor must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let f = factor;
        let d_new = self.pixel_size_um / T::of(f as f64);
        let shift = (self.pixel_size_um - d_new) / T::of(2.0);
        match self.dims {
            Dims::D1(m) => {
                let mut x = Vec::with_capacity(m * f);
                for j in 0..m {
                    for _ in 0..f {
                        x.push(self.transmissions[j]);
                    }
                }
                Self::new(
                    Dims::D1(m * f),
                    d_new,
                    [self.origin_um[0] - shift, self.origin_um[1]],
                    x,
                )
            }
            Dims::D2(mx, my) => {
                let mut x = vec![T::zero(); mx * f * my * f];
                for iy in 0..my {
                    for ix in 0..mx {
                        let v = self.transmissions[iy * mx + ix];
                        for cy in 0..f {
                            for cx in 0..f {
                                x[(iy * f + cy) * (mx * f) + ix * f + cx] = v;
                            }
                        }
                    }
                }
                Self::new(
                    Dims::D2(mx * f, my * f),
                    d_new,
                    [self.origin_um[0] - shift, self.origin_um[1] - shift],
                    x,
                )
            }
        }
    }

    /// Average children back onto the parent grid (inverse of `subdivide`).
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(CoreError::InvalidParameter("factor must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let f = factor;
        let d_new = self.pixel_size_um * T::of(f as f64);
        let shift = (d_new - self.pixel_size_um) / T::of(2.0);
        match self.dims {
            Dims::D1(m) => {
                if m % f != 0 {
                    return Err(CoreError::InvalidParameter("dims not divisible by factor".into()));
                }
                let x: Vec<T> = (0..m / f)
                    .map(|j| {
                        let mut s = T::zero();
                        for c in 0..f {
                            s = s + self.transmissions[j * f + c];
                        }
                        s / T::of(f as f64)
                    })
                    .collect();
                Self::new(
                    Dims::D1(m / f),
                    d_new,
                    [self.origin_um[0] + shift, self.origin_um[1]],
                    x,
                )
            }
            Dims::D2(mx, my) => {
                if mx % f != 0 || my % f != 0 {
                    return Err(CoreError::InvalidParameter("dims not divisible by factor".into()));
                }
                let (nx, ny) = (mx / f, my / f);
                let mut x = vec![T::zero(); nx * ny];
                for iy in 0..ny {
                    for ix in 0..nx {
                        let mut s = T::zero();
                        for cy in 0..f {
                            for cx in 0..f {
                                s = s + self.transmissions[(iy * f + cy) * mx + ix * f + cx];
                            }
                        }
                        x[iy * nx + ix] = s / T::of((f * f) as f64);
                    }
                }
                Self::new(
                    Dims::D2(nx, ny),
                    d_new,
                    [self.origin_um[0] + shift, self.origin_um[1] + shift],
                    x,
                )
            }
        }
    }
}

/// Detector positions in the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorGrid<T> {
    pub dims: Dims,
    pub pitch_um: T,
    points: Vec<Point<T>>,
}

impl<T: Scalar> DetectorGrid<T> {
    pub fn new(dims: Dims, pitch_um: T, points: Vec<Point<T>>) -> Result<Self> {
        if !(pitch_um > T::zero()) {
            return Err(CoreError::InvalidParameter("detector pitch must be positive".into()));
        }
        if points.len() != dims.len() || points.is_empty() {
            return Err(CoreError::InvalidParameter("detector point count mismatch".into()));
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i][0] == points[j][0] && points[i][1] == points[j][1] {
                    return Err(CoreError::InvalidParameter("detector points must be distinct".into()));
                }
            }
        }
        Ok(Self { dims, pitch_um, points })
    }

    /// Regular grid centred on the axis.
    pub fn centered(dims: Dims, pitch_um: T) -> Result<Self> {
        let mut points = Vec::with_capacity(dims.len());
        let (nx, ny) = match dims {
            Dims::D1(n) => (n, 1),
            Dims::D2(a, b) => (a, b),
        };
        let cx = T::of((nx as f64 - 1.0) / 2.0);
        let cy = T::of((ny as f64 - 1.0) / 2.0);
        for iy in 0..ny {
            for ix in 0..nx {
                points.push([
                    (T::of(ix as f64) - cx) * pitch_um,
                    if ny == 1 {
                        T::zero()
                    } else {
                        (T::of(iy as f64) - cy) * pitch_um
                    },
                ]);
            }
        }
        Self::new(dims, pitch_um, points)
    }

    /// Centred grid whose conjugate points cover the object span plus a
    /// margin (micrometres, object plane) on each side.
    pub fn covering(obj: &ObjectModel<T>, sys: &ImagingSystem<T>, margin_um: T, pitch_um: T) -> Result<Self> {
        let m = sys.magnification();
        let (lo, hi) = obj.span_um();
        let half_obj = (hi - lo) / T::of(2.0) + margin_um;
        let conj_pitch = pitch_um / m;
        let n_half = (half_obj / conj_pitch).floor().to_f64_lossy() as usize;
        let n = 2 * n_half + 1;
        match obj.dims {
            Dims::D1(_) => Self::centered(Dims::D1(n), pitch_um),
            Dims::D2(..) => Self::centered(Dims::D2(n, n), pitch_um),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point<T> {
        self.points[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::J1_FIRST_ZERO;
    use approx::assert_abs_diff_eq;

    fn methods_system() -> ImagingSystem<f64> {
        // s_o = 234 mm, s_i = 454 mm, pinhole diameter 1.7 mm -> R = 0.85 mm,
        // lambda = 405 nm
        ImagingSystem::new(234.0, 454.0, 0.85, 405.0).unwrap()
    }

    #[test]
    fn rayleigh_width_reference_geometry() {
        let sys = methods_system();
        // Delta_l = s_o lambda / (2R) = 234000 * 0.405 / 1700 um
        let want = 234_000.0 * 0.405 / 1700.0;
        assert_abs_diff_eq!(sys.rayleigh_width_um(), want, epsilon = 1e-9);
        assert_abs_diff_eq!(sys.rayleigh_width_um(), 55.7, epsilon = 0.1);
        assert_abs_diff_eq!(sys.magnification(), 454.0 / 234.0, epsilon = 1e-12);
    }

    #[test]
    fn rayleigh_width_scaling() {
        let a = ImagingSystem::new(234.0, 454.0, 0.85, 405.0).unwrap();
        let b = ImagingSystem::new(234.0, 454.0, 1.70, 405.0).unwrap();
        assert_abs_diff_eq!(a.rayleigh_width_um() / 2.0, b.rayleigh_width_um(), epsilon = 1e-12);
        // R -> infinity gives vanishing width
        let c = ImagingSystem::new(234.0, 454.0, 1e9, 405.0).unwrap();
        assert!(c.rayleigh_width_um() < 1e-4);
    }

    #[test]
    fn psf_unit_at_conjugate_point() {
        let sys = methods_system();
        let m = sys.magnification();
        let r = [120.0, 0.0];
        let s = [-r[0] / m, 0.0];
        assert_abs_diff_eq!(psf_eval(s, r, &sys), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn psf_zero_at_first_bessel_root() {
        let sys = methods_system();
        let dl = sys.rayleigh_width_um();
        // argument x = pi * dist / dl equals the first J1 root
        let dist = J1_FIRST_ZERO / std::f64::consts::PI * dl;
        let h = psf_eval([dist, 0.0], [0.0, 0.0], &sys);
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn psf_bounded_and_local() {
        let sys = methods_system();
        let dl = sys.rayleigh_width_um();
        for k in 1..200 {
            let dist = 0.11 * k as f64 * dl;
            let h: f64 = psf_eval([dist, 0.0], [0.0, 0.0], &sys);
            assert!(h.abs() < 1.0, "|h| must stay below 1 away from centre");
            if dist > 10.0 * dl {
                assert!(h.abs() < 1e-2, "PSF tail beyond 10 Rayleigh widths: {h}");
            }
        }
    }

    #[test]
    fn subdivide_1d_repeats_values() {
        let obj = ObjectModel::centered(Dims::D1(10), 4.0, (0..10).map(|i| i as f64 / 10.0).collect()).unwrap();
        let fine = obj.subdivide(2).unwrap();
        assert_eq!(fine.dims, Dims::D1(20));
        assert_abs_diff_eq!(fine.pixel_size_um, 2.0, epsilon = 1e-14);
        for j in 0..10 {
            assert_eq!(fine.transmissions()[2 * j], obj.transmissions()[j]);
            assert_eq!(fine.transmissions()[2 * j + 1], obj.transmissions()[j]);
        }
        // identity for factor 1
        assert_eq!(obj.subdivide(1).unwrap(), obj);
        // factor 0 rejected
        assert!(obj.subdivide(0).is_err());
    }

    #[test]
    fn subdivide_2d_conserves_area() {
        let x: Vec<f64> = (0..16).map(|i| (i as f64) / 16.0).collect();
        let obj = ObjectModel::centered(Dims::D2(4, 4), 3.0, x).unwrap();
        let fine = obj.subdivide(2).unwrap();
        assert_eq!(fine.dims, Dims::D2(8, 8));
        let coarse_area: f64 = obj.transmissions().iter().sum::<f64>() * obj.pixel_area();
        let fine_area: f64 = fine.transmissions().iter().sum::<f64>() * fine.pixel_area();
        assert_abs_diff_eq!(coarse_area, fine_area, epsilon = 1e-12);
    }

    #[test]
    fn subdivide_then_coarsen_round_trips() {
        let x: Vec<f64> = (0..12).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let obj = ObjectModel::centered(Dims::D1(12), 5.0, x).unwrap();
        let back = obj.subdivide(3).unwrap().coarsen(3).unwrap();
        assert_eq!(back.dims, obj.dims);
        assert_abs_diff_eq!(back.pixel_size_um, obj.pixel_size_um, epsilon = 1e-12);
        assert_abs_diff_eq!(back.origin_um[0], obj.origin_um[0], epsilon = 1e-10);
        for (a, b) in back.transmissions().iter().zip(obj.transmissions()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn pixel_centers_and_span() {
        let obj = ObjectModel::centered(Dims::D1(4), 2.0, vec![0.5; 4]).unwrap();
        assert_abs_diff_eq!(obj.pixel_center(0)[0], -3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(obj.pixel_center(3)[0], 3.0, epsilon = 1e-14);
        let (lo, hi) = obj.span_um();
        assert_abs_diff_eq!(lo, -4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(hi, 4.0, epsilon = 1e-14);
    }

    #[test]
    fn detector_grid_rejects_duplicates() {
        let pts = vec![[0.0, 0.0], [0.0, 0.0]];
        assert!(DetectorGrid::new(Dims::D1(2), 1.0, pts).is_err());
    }

    #[test]
    fn invalid_transmissions_rejected() {
        assert!(ObjectModel::centered(Dims::D1(2), 1.0, vec![0.5, 1.5]).is_err());
        assert!(ObjectModel::centered(Dims::D1(2), 1.0, vec![-0.1, 0.5]).is_err());
    }
}
