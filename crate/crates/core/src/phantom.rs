//! Bundled test objects. These are stylized stand-ins with exact pixel maps
//! documented here, not reproductions of any particular chart.
//!
//! All patterns are piecewise constant on a cell grid of CELL_UM = 27.87 um
//! and rendered onto a requested pixel grid by area averaging, so the same
//! physical object is representable at any pixel size.
//!
//! three-slit (1D, 12 cells):
//!   [b b 1 1 b 1 1 b 1 1 b b]          b = 0.005
//!   Three transmitting slits of two cells separated by one-cell gaps; the
//!   faint background keeps every transmission strictly positive.
//! grey-bars (1D, 12 cells):
//!   [b b .9 .9 b .6 .6 b .3 .3 b b]    b = 0.05
//! binary-bars (1D, 12 cells):
//!   [0 0 1 1 0 1 1 0 1 1 0 0]          exact 0/1 values
//! digit-5 (2D, 5 x 7 cells, row 0 at the top):
//!   1 1 1 1 1
//!   1 0 0 0 0
//!   1 1 1 1 0
//!   0 0 0 1 1  -> stylized "5" bitmap, transmission 1 on 0
//!   0 0 0 0 1
//!   1 0 0 0 1
//!   0 1 1 1 0

use crate::error::{CoreError, Result};
use crate::optics::{Dims, ObjectModel};
use crate::scalar::Scalar;

/// Cell width of every bundled pattern, micrometres.
pub const CELL_UM: f64 = 27.87;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phantom {
    ThreeSlit,
    DigitFive,
    GreyBars,
    BinaryBars,
}

impl Phantom {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "three-slit" => Ok(Phantom::ThreeSlit),
            "digit-5" => Ok(Phantom::DigitFive),
            "grey-bars" => Ok(Phantom::GreyBars),
            "binary-bars" => Ok(Phantom::BinaryBars),
            other => Err(CoreError::InvalidParameter(format!("unknown phantom '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Phantom::ThreeSlit => "three-slit",
            Phantom::DigitFive => "digit-5",
            Phantom::GreyBars => "grey-bars",
            Phantom::BinaryBars => "binary-bars",
        }
    }

    /// Cell values; 1D patterns have height 1.
    pub fn cells(&self) -> (Vec<f64>, usize, usize) {
        match self {
            Phantom::ThreeSlit => {
                let b = 0.005;
                (vec![b, b, 1.0, 1.0, b, 1.0, 1.0, b, 1.0, 1.0, b, b], 12, 1)
            }
            Phantom::GreyBars => {
                let b = 0.05;
                (vec![b, b, 0.9, 0.9, b, 0.6, 0.6, b, 0.3, 0.3, b, b], 12, 1)
            }
            Phantom::BinaryBars => (
                vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0],
                12,
                1,
            ),
            Phantom::DigitFive => {
                #[rustfmt::skip]
                let rows: [[f64; 5]; 7] = [
                    [1., 1., 1., 1., 1.],
                    [1., 0., 0., 0., 0.],
                    [1., 1., 1., 1., 0.],
                    [0., 0., 0., 1., 1.],
                    [0., 0., 0., 0., 1.],
                    [1., 0., 0., 0., 1.],
                    [0., 1., 1., 1., 0.],
                ];
                (rows.iter().flatten().copied().collect(), 5, 7)
            }
        }
    }

    pub fn is_1d(&self) -> bool {
        !matches!(self, Phantom::DigitFive)
    }

    /// Outside-pattern background transmission.
    pub fn background(&self) -> f64 {
        match self {
            Phantom::ThreeSlit => 0.005,
            Phantom::GreyBars => 0.05,
            Phantom::BinaryBars | Phantom::DigitFive => 0.0,
        }
    }

    /// Pattern span along x, micrometres.
    pub fn natural_span_um(&self) -> f64 {
        let (_, cx, _) = self.cells();
        cx as f64 * CELL_UM
    }

    /// Render onto `dims` pixels of size `pixel_size_um` (centred grids,
    /// exact area averaging of the cell pattern).
    pub fn render<T: Scalar>(&self, dims: Dims, pixel_size_um: T) -> Result<ObjectModel<T>> {
        let (cells, cx, cy) = self.cells();
        let bg = self.background();
        let cell = CELL_UM;
        let d = pixel_size_um.to_f64_lossy();
        if matches!(dims, Dims::D2(..)) != !self.is_1d() {
            return Err(CoreError::InvalidParameter(format!(
                "phantom {} expects {} dims",
                self.name(),
                if self.is_1d() { "1D" } else { "2D" }
            )));
        }
        let (mx, my) = match dims {
            Dims::D1(m) => (m, 1),
            Dims::D2(a, b) => (a, b),
        };
        let pat_w = cx as f64 * cell;
        let pat_h = cy as f64 * cell;
        let span_x = mx as f64 * d;
        let span_y = my as f64 * d;
        let mut x = Vec::with_capacity(mx * my);
        for iy in 0..my {
            for ix in 0..mx {
                let ax = ix as f64 * d - span_x / 2.0;
                let bx = ax + d;
                let (ay, by) = if self.is_1d() {
                    (-cell / 2.0, cell / 2.0) // irrelevant: 1D averages along x only
                } else {
                    let ay = iy as f64 * d - span_y / 2.0;
                    (ay, ay + d)
                };
                let mut acc = 0.0;
                let mut covered = 0.0;
                for ciy in 0..cy {
                    for cix in 0..cx {
                        let cax = cix as f64 * cell - pat_w / 2.0;
                        let cbx = cax + cell;
                        let ovx = (bx.min(cbx) - ax.max(cax)).max(0.0);
                        let ovy = if self.is_1d() {
                            by - ay
                        } else {
                            let cay = ciy as f64 * cell - pat_h / 2.0;
                            let cby = cay + cell;
                            (by.min(cby) - ay.max(cay)).max(0.0)
                        };
                        let ov = ovx * ovy;
                        acc += ov * cells[ciy * cx + cix];
                        covered += ov;
                    }
                }
                let area = (bx - ax) * (by - ay);
                acc += (area - covered).max(0.0) * bg;
                x.push(T::of((acc / area).clamp(0.0, 1.0)));
            }
        }
        ObjectModel::centered(dims, pixel_size_um, x)
    }
}
