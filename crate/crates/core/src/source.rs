//! Illumination source models: pseudo-thermal speckle and SPDC photon pairs.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Thermal,
    Spdc,
}

impl SourceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SourceKind::Thermal => "thermal",
            SourceKind::Spdc => "spdc",
        }
    }
}

/// Source with its spatial correlation width.
///
/// Thermal: pairwise field correlation kernel K(s, s') = exp(-|s-s'|^2 / w_c^2).
/// SPDC: joint-position amplitude Lambda(s1, s2) = exp(-|s1-s2|^2 / w^2) with
/// w = w_c / sqrt(ln 2), which makes the FWHM of Lambda(s, -s) equal w_c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceModel<T> {
    Thermal { correlation_width_um: T },
    Spdc { correlation_width_um: T },
}

impl<T: Scalar> SourceModel<T> {
    pub fn thermal(w_c_um: T) -> Result<Self> {
        if !(w_c_um > T::zero()) {
            return Err(CoreError::InvalidParameter("correlation width must be positive".into()));
        }
        Ok(SourceModel::Thermal { correlation_width_um: w_c_um })
    }

    pub fn spdc(w_c_um: T) -> Result<Self> {
        if !(w_c_um > T::zero()) {
            return Err(CoreError::InvalidParameter("correlation width must be positive".into()));
        }
        Ok(SourceModel::Spdc { correlation_width_um: w_c_um })
    }

    pub fn kind(&self) -> SourceKind {
        match self {
            SourceModel::Thermal { .. } => SourceKind::Thermal,
            SourceModel::Spdc { .. } => SourceKind::Spdc,
        }
    }

    pub fn correlation_width_um(&self) -> T {
        match *self {
            SourceModel::Thermal { correlation_width_um } => correlation_width_um,
            SourceModel::Spdc { correlation_width_um } => correlation_width_um,
        }
    }

    /// Gaussian width of the pairwise kernel: w_c itself for thermal,
    /// w_c / sqrt(ln 2) for SPDC.
    pub fn kernel_width_um(&self) -> T {
        match *self {
            SourceModel::Thermal { correlation_width_um } => correlation_width_um,
            SourceModel::Spdc { correlation_width_um } => {
                correlation_width_um / T::of(std::f64::consts::LN_2.sqrt())
            }
        }
    }

    /// exp(-dist^2 / w^2) with w = kernel_width_um().
    pub fn kernel(&self, dist_sq_um2: T) -> T {
        let w = self.kernel_width_um();
        (-dist_sq_um2 / (w * w)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn thermal_kernel_values() {
        let src = SourceModel::thermal(30.0f64).unwrap();
        assert_abs_diff_eq!(src.kernel(0.0), 1.0, epsilon = 1e-15);
        // |s - s'| = w_c gives e^-1
        assert_abs_diff_eq!(src.kernel(900.0), (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn spdc_fwhm_convention() {
        // Lambda(s, -s) = exp(-4 s^2 / w^2) should halve at |2s| = w_c
        let w_c = 24.0f64;
        let src = SourceModel::spdc(w_c).unwrap();
        let s = w_c / 2.0;
        let value = src.kernel((2.0 * s) * (2.0 * s));
        assert_abs_diff_eq!(value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_width_rejected() {
        assert!(SourceModel::<f64>::thermal(0.0).is_err());
        assert!(SourceModel::<f64>::spdc(-1.0).is_err());
    }
}
