//! Synthetic data generation, the Gaussian-speckle Monte Carlo oracle,
//! correlation-width fitting, and correlation-width optimization sweeps.

pub mod rng;

use num_complex::Complex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::fisher::{build_fim, PROBABILITY_FLOOR, RANK_RCOND};
use crate::forward::{CoefficientTensor, ForwardModel, TensorMode};
use crate::linalg::sym_eigen;
use crate::measurement::{DetTuple, MeasurementSet, TupleSet};
use crate::optics::{psf_eval, DetectorGrid, ImagingSystem, ObjectModel, Point};
use crate::scalar::Scalar;
use crate::source::{SourceKind, SourceModel};
use crate::swm::{reconstruct, infidelity, PipelineConfig};
use rng::{multinomial, stream_rng};

/// Draw one dataset of `events` multinomial trials over the complete outcome
/// set (tuples plus the no-counts bin).
pub fn synthesize_dataset<T: Scalar>(
    truth: &ObjectModel<T>,
    sys: &ImagingSystem<T>,
    src: &SourceModel<T>,
    det: &DetectorGrid<T>,
    order: usize,
    tuple_cap_um: T,
    events: u64,
    seed: u64,
) -> Result<MeasurementSet<T>> {
    if events == 0 {
        return Err(CoreError::InvalidParameter("events must be >= 1".into()));
    }
    let mode = TensorMode::default_for(truth.dims);
    let tensor = CoefficientTensor::build(truth, sys, src, det, mode)?;
    let tuples = TupleSet::build(det, order, tuple_cap_um)?;
    let model = ForwardModel::new(&tensor, &tuples)?;
    let (pbar, p0) = model.probabilities(truth.transmissions())?;
    let mut outcome = pbar.clone();
    outcome.push(p0);
    let mut gen = stream_rng(seed, 0);
    let counts = multinomial(&mut gen, events, &outcome);
    let freqs: Vec<T> = counts[..counts.len() - 1]
        .iter()
        .map(|&c| T::of(c as f64) / T::of(events as f64))
        .collect();
    let f0 = T::of(counts[counts.len() - 1] as f64) / T::of(events as f64);
    MeasurementSet::new(tuples, freqs, f0, events, seed)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct OracleEstimate<T> {
    pub mean: T,
    pub stderr: T,
    pub samples: usize,
    /// covariance needed the +1e-10 I regularization
    pub regularized: bool,
}

/// Brute-force G^(n) for a thermal source: draw circular complex Gaussian
/// fields on the pixel grid with covariance exp(-|s-s'|^2/w_c^2), propagate
/// through transmission and PSF, and average the intensity product over the
/// tuple. Fields are drawn at object-pixel resolution.
pub fn speckle_oracle_gn<T: Scalar>(
    obj: &ObjectModel<T>,
    sys: &ImagingSystem<T>,
    w_c_um: T,
    det: &DetectorGrid<T>,
    tuple: &DetTuple,
    samples: usize,
    seed: u64,
) -> Result<OracleEstimate<T>> {
    if samples < 1000 {
        return Err(CoreError::InvalidParameter("need at least 1e3 samples".into()));
    }
    let m = obj.len();
    // covariance square root on the pixel grid
    let mut cov = ndarray::Array2::<T>::zeros((m, m));
    for l in 0..m {
        for k in 0..m {
            let a = obj.pixel_center(l);
            let b = obj.pixel_center(k);
            let dx = a[0] - b[0];
            let dy = a[1] - b[1];
            cov[[l, k]] = (-(dx * dx + dy * dy) / (w_c_um * w_c_um)).exp();
        }
    }
    let mut eig = sym_eigen(&cov.view());
    let lmax = eig.lambda_max().abs().max(T::min_positive_value());
    let mut regularized = false;
    if eig.lambda_min() < -T::of(1e-10) * lmax {
        for i in 0..m {
            cov[[i, i]] = cov[[i, i]] + T::of(1e-10);
        }
        eig = sym_eigen(&cov.view());
        regularized = true;
    }
    // A = V diag(sqrt(max(lambda, 0)))
    let mut amp = ndarray::Array2::<T>::zeros((m, m));
    for c in 0..m {
        let s = eig.values[c].max(T::zero()).sqrt();
        for r in 0..m {
            amp[[r, c]] = eig.vectors[[r, c]] * s;
        }
    }
    // weighted PSF at the tuple's detectors
    let sigma = obj.pixel_area();
    let n = tuple.len();
    let mut prop = vec![vec![T::zero(); m]; n];
    for (t, &di) in tuple.iter().enumerate() {
        for j in 0..m {
            prop[t][j] =
                sigma * obj.transmissions()[j] * psf_eval(obj.pixel_center(j), det.point(di), sys);
        }
    }

    const BLOCK: usize = 4096;
    let blocks = samples.div_ceil(BLOCK);
    let partials: Vec<(T, T, usize)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut gen = stream_rng(seed, 1 + b as u64);
            let count = BLOCK.min(samples - b * BLOCK);
            let mut sum = T::zero();
            let mut sum_sq = T::zero();
            let inv_sqrt2 = T::of(std::f64::consts::FRAC_1_SQRT_2);
            let mut z = vec![Complex::new(T::zero(), T::zero()); m];
            let mut field = vec![Complex::new(T::zero(), T::zero()); m];
            for _ in 0..count {
                for zk in z.iter_mut() {
                    let re: f64 = StandardNormal.sample(&mut gen);
                    let im: f64 = StandardNormal.sample(&mut gen);
                    *zk = Complex::new(T::of(re) * inv_sqrt2, T::of(im) * inv_sqrt2);
                }
                for r in 0..m {
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for c in 0..m {
                        acc = acc + z[c] * amp[[r, c]];
                    }
                    field[r] = acc;
                }
                let mut prod = T::one();
                for row in prop.iter() {
                    let mut e = Complex::new(T::zero(), T::zero());
                    for j in 0..m {
                        e = e + field[j] * row[j];
                    }
                    prod = prod * e.norm_sqr();
                }
                sum = sum + prod;
                sum_sq = sum_sq + prod * prod;
            }
            (sum, sum_sq, count)
        })
        .collect();
    let mut sum = T::zero();
    let mut sum_sq = T::zero();
    for (s, s2, _) in &partials {
        sum = sum + *s;
        sum_sq = sum_sq + *s2;
    }
    let nf = T::of(samples as f64);
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(T::zero());
    let stderr = (var / nf).sqrt();
    Ok(OracleEstimate { mean, stderr, samples, regularized })
}

/// Fit w_c from a G2 map over image-plane point pairs with the model
/// G2 ~ A exp(-2 |r1 - r2|^2 / (m w_c)^2).
pub fn fit_correlation_width<T: Scalar>(
    map: &[(Point<T>, Point<T>, T)],
    magnification: T,
) -> Result<T> {
    let mut pts: Vec<(T, T)> = Vec::new(); // (u = 2 dr^2 / m^2, y)
    for &(r1, r2, g) in map {
        let dx = r1[0] - r2[0];
        let dy = r1[1] - r2[1];
        let u = T::of(2.0) * (dx * dx + dy * dy) / (magnification * magnification);
        pts.push((u, g));
    }
    let mut seps: Vec<T> = pts.iter().map(|&(u, _)| u).collect();
    seps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    seps.dedup_by(|a, b| (*a - *b).abs() <= T::of(1e-12) * a.abs().max(T::one()));
    if seps.len() < 5 {
        return Err(CoreError::FitFailed("need at least 5 distinct separations".into()));
    }
    let ymax = pts.iter().fold(T::zero(), |a, &(_, y)| a.max(y));
    let ymin = pts.iter().fold(T::infinity(), |a, &(_, y)| a.min(y));
    if !(ymax > T::zero()) || (ymax - ymin) <= T::of(1e-12) * ymax {
        return Err(CoreError::FitFailed("flat correlation map".into()));
    }
    // weighted log-linear initialization: ln y = ln A - c u, weights y^2
    let mut sw = T::zero();
    let mut su = T::zero();
    let mut sl = T::zero();
    let mut suu = T::zero();
    let mut sul = T::zero();
    for &(u, y) in &pts {
        if y <= ymax * T::of(1e-12) {
            continue;
        }
        let w = y * y;
        let ly = y.ln();
        sw = sw + w;
        su = su + w * u;
        sl = sl + w * ly;
        suu = suu + w * u * u;
        sul = sul + w * u * ly;
    }
    let det = sw * suu - su * su;
    if det.abs() <= T::zero() {
        return Err(CoreError::FitFailed("degenerate separations".into()));
    }
    let mut c = -(sw * sul - su * sl) / det;
    let ln_a = (suu * sl - su * sul) / det;
    let mut a = ln_a.exp();
    // Gauss-Newton refinement in linear space on (A, c)
    for _ in 0..60 {
        let mut j11 = T::zero();
        let mut j12 = T::zero();
        let mut j22 = T::zero();
        let mut g1 = T::zero();
        let mut g2 = T::zero();
        for &(u, y) in &pts {
            let e = (-c * u).exp();
            let r = a * e - y;
            let da = e;
            let dc = -a * u * e;
            j11 = j11 + da * da;
            j12 = j12 + da * dc;
            j22 = j22 + dc * dc;
            g1 = g1 + da * r;
            g2 = g2 + dc * r;
        }
        let det = j11 * j22 - j12 * j12;
        if det.abs() <= T::min_positive_value() {
            break;
        }
        let step_a = (j22 * g1 - j12 * g2) / det;
        let step_c = (j11 * g2 - j12 * g1) / det;
        a = a - step_a;
        c = c - step_c;
        if step_a.abs() <= T::of(1e-14) * a.abs().max(T::one())
            && step_c.abs() <= T::of(1e-14) * c.abs().max(T::one())
        {
            break;
        }
    }
    if !(c > T::zero()) {
        return Err(CoreError::FitFailed("nonpositive decay rate".into()));
    }
    Ok(T::one() / c.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMetric {
    /// Tr F^-1 / N at the evaluation object
    CrbTrace,
    /// mean reconstruction infidelity over seeds
    Infidelity,
}

/// Which transmissions the CRB metric is evaluated at: the phantom itself, or
/// the uniform design point (transmission one everywhere, geometry only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepEval {
    Truth,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint<T> {
    pub w_c_um: T,
    pub value: Option<T>,
    pub stderr: Option<T>,
    pub effective_rank: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult<T> {
    pub grid: Vec<T>,
    pub points: Vec<SweepPoint<T>>,
    /// index of the smallest valid metric value
    pub argmin: Option<usize>,
    /// metric nonincreasing toward small w_c (nondecreasing in w_c), within
    /// 1e-6 relative per point
    pub monotone_nonincreasing_toward_small: bool,
}

pub struct SweepConfig<'a, T> {
    pub truth: &'a ObjectModel<T>,
    pub sys: &'a ImagingSystem<T>,
    pub kind: SourceKind,
    pub det: &'a DetectorGrid<T>,
    pub order: usize,
    pub tuple_cap_um: T,
    pub events: u64,
    pub seeds: Vec<u64>,
    pub metric: SweepMetric,
    pub eval: SweepEval,
    pub pipeline: Option<PipelineConfig<T>>,
}

/// Sweep the correlation width over a strictly increasing grid.
pub fn sweep_width<T: Scalar>(grid_um: &[T], cfg: &SweepConfig<'_, T>) -> Result<SweepResult<T>> {
    if grid_um.len() < 5 {
        return Err(CoreError::InvalidParameter("grid needs at least 5 points".into()));
    }
    if grid_um.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CoreError::InvalidParameter("grid must be strictly increasing".into()));
    }
    let mut points = Vec::with_capacity(grid_um.len());
    for &w_c in grid_um {
        let point = sweep_point(w_c, cfg);
        points.push(match point {
            Ok(p) => p,
            Err(e) => SweepPoint {
                w_c_um: w_c,
                value: None,
                stderr: None,
                effective_rank: None,
                error: Some(e.to_string()),
            },
        });
    }
    let mut argmin = None;
    for (i, p) in points.iter().enumerate() {
        if let Some(v) = p.value {
            if argmin.map_or(true, |j: usize| v < points[j].value.unwrap()) {
                argmin = Some(i);
            }
        }
    }
    let mut monotone = points.iter().all(|p| p.value.is_some());
    if monotone {
        for w in points.windows(2) {
            let a = w[0].value.unwrap();
            let b = w[1].value.unwrap();
            if b < a * (T::one() - T::of(1e-6)) {
                monotone = false;
                break;
            }
        }
    }
    Ok(SweepResult {
        grid: grid_um.to_vec(),
        points,
        argmin,
        monotone_nonincreasing_toward_small: monotone,
    })
}

fn sweep_point<T: Scalar>(w_c: T, cfg: &SweepConfig<'_, T>) -> Result<SweepPoint<T>> {
    let src = match cfg.kind {
        SourceKind::Thermal => SourceModel::thermal(w_c)?,
        SourceKind::Spdc => SourceModel::spdc(w_c)?,
    };
    match cfg.metric {
        SweepMetric::CrbTrace => {
            let mode = TensorMode::default_for(cfg.truth.dims);
            let tensor = CoefficientTensor::build(cfg.truth, cfg.sys, &src, cfg.det, mode)?;
            let tuples = TupleSet::build(cfg.det, cfg.order, cfg.tuple_cap_um)?;
            let model = ForwardModel::new(&tensor, &tuples)?;
            let x: Vec<T> = match cfg.eval {
                SweepEval::Truth => cfg.truth.transmissions().to_vec(),
                SweepEval::Uniform => vec![T::one(); cfg.truth.len()],
            };
            let (pbar, p0) = model.probabilities(&x)?;
            let (grads, gp0) = model.gradients(&x);
            let rep = build_fim(&pbar, p0, &grads.view(), &gp0, T::of(PROBABILITY_FLOOR))?;
            let eig = sym_eigen(&rep.matrix.view());
            if !(eig.lambda_min() > T::zero()) {
                return Err(CoreError::RankDeficient {
                    rank: eig.values.iter().filter(|&&l| l > T::zero()).count(),
                    dim: rep.dim(),
                });
            }
            // full inverse trace: the interesting branch of the sweep is where
            // the smallest eigenvalues collapse, so no rank cut here
            let tr: T = eig.values.iter().map(|&l| T::one() / l).sum();
            let rank = eig
                .values
                .iter()
                .filter(|&&l| l > T::of(RANK_RCOND) * eig.lambda_max())
                .count();
            Ok(SweepPoint {
                w_c_um: w_c,
                value: Some(tr / T::of(cfg.events.max(1) as f64)),
                stderr: None,
                effective_rank: Some(rank),
                error: None,
            })
        }
        SweepMetric::Infidelity => {
            let pipeline = cfg
                .pipeline
                .clone()
                .unwrap_or_else(|| PipelineConfig::new(cfg.tuple_cap_um));
            let mut vals = Vec::with_capacity(cfg.seeds.len());
            for &seed in &cfg.seeds {
                let data = synthesize_dataset(
                    cfg.truth,
                    cfg.sys,
                    &src,
                    cfg.det,
                    cfg.order,
                    cfg.tuple_cap_um,
                    cfg.events,
                    seed,
                )?;
                let rec = reconstruct(&data, cfg.truth, cfg.sys, &src, cfg.det, &pipeline, None)?;
                vals.push(infidelity(cfg.truth.transmissions(), rec.object.transmissions())?);
            }
            let nf = T::of(vals.len() as f64);
            let mean: T = vals.iter().copied().sum::<T>() / nf;
            let var: T = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            Ok(SweepPoint {
                w_c_um: w_c,
                value: Some(mean),
                stderr: Some((var / nf).sqrt()),
                effective_rank: None,
                error: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::Dims;
    use approx::assert_relative_eq;

    #[test]
    fn synthesized_frequencies_close() {
        let sys = ImagingSystem::new(234.0, 454.0, 0.85, 405.0).unwrap();
        let obj = ObjectModel::centered(Dims::D1(6), 27.87, vec![0.9; 6]).unwrap();
        let src = SourceModel::thermal(40.0).unwrap();
        let det = DetectorGrid::covering(&obj, &sys, 110.0, 44.64).unwrap();
        let data = synthesize_dataset(&obj, &sys, &src, &det, 2, 220.0, 200_000, 5).unwrap();
        let total: f64 = data.frequencies.iter().sum::<f64>() + data.no_count_frequency;
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
        // reproducible per seed
        let again = synthesize_dataset(&obj, &sys, &src, &det, 2, 220.0, 200_000, 5).unwrap();
        assert_eq!(data, again);
    }

    #[test]
    fn frequency_error_scales_as_inverse_sqrt_n() {
        let sys = ImagingSystem::new(234.0, 454.0, 0.85, 405.0).unwrap();
        let obj = ObjectModel::centered(Dims::D1(5), 30.0, vec![0.8; 5]).unwrap();
        let src = SourceModel::thermal(45.0).unwrap();
        let det = DetectorGrid::covering(&obj, &sys, 60.0, 44.64).unwrap();
        let mode = TensorMode::default_for(obj.dims);
        let tensor = CoefficientTensor::build(&obj, &sys, &src, &det, mode).unwrap();
        let tuples = TupleSet::build(&det, 2, 220.0).unwrap();
        let model = ForwardModel::new(&tensor, &tuples).unwrap();
        let (pbar, _) = model.probabilities(obj.transmissions()).unwrap();

        let ns = [1_000u64, 10_000, 100_000, 1_000_000];
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        for (i, &n) in ns.iter().enumerate() {
            // average sup-error over a few seeds to stabilize the slope
            let mut acc = 0.0;
            let reps = 8;
            for s in 0..reps {
                let data =
                    synthesize_dataset(&obj, &sys, &src, &det, 2, 220.0, n, 100 + s + i as u64 * 31)
                        .unwrap();
                let sup: f64 = data
                    .frequencies
                    .iter()
                    .zip(&pbar)
                    .map(|(&f, &p): (&f64, &f64)| (f - p).abs())
                    .fold(0.0f64, f64::max);
                acc += sup;
            }
            lx.push((n as f64).ln());
            ly.push((acc / reps as f64).ln());
        }
        let n = lx.len() as f64;
        let sx: f64 = lx.iter().sum();
        let sy: f64 = ly.iter().sum();
        let sxx: f64 = lx.iter().map(|v| v * v).sum();
        let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| a * b).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope + 0.5).abs() < 0.1,
            "sup-error slope vs N was {slope}, want -0.5 +/- 0.1"
        );
    }

    #[test]
    fn fit_recovers_synthetic_width() {
        let m = 1.94f64;
        let w_c = 30.0f64;
        let mut map = Vec::new();
        for i in 0..12 {
            let dr = 8.0 * i as f64;
            let g = 2.7 * (-2.0 * dr * dr / (m * w_c) / (m * w_c)).exp();
            map.push(([0.0, 0.0], [dr, 0.0], g));
        }
        let got = fit_correlation_width(&map, m).unwrap();
        assert_relative_eq!(got, w_c, max_relative = 1e-6);
    }

    #[test]
    fn fit_scaling_consistency() {
        // relabeling the same values at doubled separations doubles the width
        let mk = |scale: f64| {
            let mut map = Vec::new();
            for i in 0..10 {
                let dr0 = 5.0 * i as f64;
                let g = (-2.0 * dr0 * dr0 / (25.0 * 25.0)).exp();
                map.push(([0.0, 0.0], [scale * dr0, 0.0], g));
            }
            fit_correlation_width(&map, 1.0).unwrap()
        };
        let w1 = mk(1.0);
        let w2 = mk(2.0);
        assert_relative_eq!(w2, 2.0 * w1, max_relative = 1e-6);
        assert_relative_eq!(w1, 25.0, max_relative = 1e-6);
    }

    #[test]
    fn fit_with_noise_stays_close() {
        let m = 1.94f64;
        let w_c = 30.0f64;
        let mut gen = stream_rng(11, 0);
        let mut map = Vec::new();
        for i in 0..24 {
            let dr = 4.0 * i as f64;
            let noise: f64 = StandardNormal.sample(&mut gen);
            let g = (1.0 + 0.05 * noise) * (-2.0 * dr * dr / (m * w_c) / (m * w_c)).exp();
            map.push(([0.0, 0.0], [dr, 0.0], g.max(0.0)));
        }
        let got = fit_correlation_width(&map, m).unwrap();
        assert!((got - w_c).abs() / w_c < 0.05, "got {got}");
    }

    #[test]
    fn fit_rejects_flat_or_sparse_maps() {
        let flat: Vec<(Point<f64>, Point<f64>, f64)> = (0..8)
            .map(|i| ([0.0, 0.0], [5.0 * i as f64, 0.0], 1.0))
            .collect();
        assert!(fit_correlation_width(&flat, 1.0).is_err());
        let sparse: Vec<(Point<f64>, Point<f64>, f64)> = (0..4)
            .map(|i| {
                let dr = 5.0 * i as f64;
                ([0.0, 0.0], [dr, 0.0], (-dr * dr / 100.0).exp())
            })
            .collect();
        assert!(fit_correlation_width(&sparse, 1.0).is_err());
    }
}
