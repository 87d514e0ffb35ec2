//! Detector tuples and measured frequency sets.

use crate::error::{CoreError, Result};
use crate::optics::DetectorGrid;
use crate::scalar::Scalar;

/// Ordered-canonical detector tuple: indices stored nondecreasing, so each
/// unordered combination (with repetition) appears exactly once.
pub type DetTuple = Vec<usize>;

/// The outcome set of an order-n correlation measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleSet {
    pub order: usize,
    tuples: Vec<DetTuple>,
}

impl TupleSet {
    /// Enumerate all nondecreasing index tuples of the given order whose
    /// pairwise image-plane distances are at most `cap_um` (the correlation
    /// support cap; pass infinity to disable).
    pub fn build<T: Scalar>(detectors: &DetectorGrid<T>, order: usize, cap_um: T) -> Result<Self> {
        if order == 0 {
            return Err(CoreError::InvalidParameter("correlation order must be >= 1".into()));
        }
        let mut tuples = Vec::new();
        let mut current: DetTuple = Vec::with_capacity(order);
        fn rec<T: Scalar>(
            detectors: &DetectorGrid<T>,
            order: usize,
            cap: T,
            start: usize,
            current: &mut DetTuple,
            out: &mut Vec<DetTuple>,
        ) {
            if current.len() == order {
                out.push(current.clone());
                return;
            }
            for i in start..detectors.len() {
                let ok = current.iter().all(|&j| {
                    let a = detectors.point(i);
                    let b = detectors.point(j);
                    let dx = a[0] - b[0];
                    let dy = a[1] - b[1];
                    (dx * dx + dy * dy).sqrt() <= cap
                });
                if ok {
                    current.push(i);
                    rec(detectors, order, cap, i, current, out);
                    current.pop();
                }
            }
        }
        rec(detectors, order, cap_um, 0, &mut current, &mut tuples);
        if tuples.is_empty() {
            return Err(CoreError::Degenerate("empty detector tuple set".into()));
        }
        Ok(Self { order, tuples })
    }

    pub fn from_tuples(order: usize, tuples: Vec<DetTuple>) -> Result<Self> {
        if tuples.is_empty() || tuples.iter().any(|t| t.len() != order) {
            return Err(CoreError::InvalidParameter("tuple list inconsistent with order".into()));
        }
        Ok(Self { order, tuples })
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[DetTuple] {
        &self.tuples
    }

    pub fn tuple(&self, k: usize) -> &DetTuple {
        &self.tuples[k]
    }

    /// Indices of tuples whose detectors all belong to `allowed`.
    pub fn restricted_to(&self, allowed: &[bool]) -> Vec<usize> {
        self.tuples
            .iter()
            .enumerate()
            .filter(|(_, t)| t.iter().all(|&d| allowed[d]))
            .map(|(k, _)| k)
            .collect()
    }
}

/// Measured (or synthesized) frequencies over a tuple set, completed by the
/// no-counts bin so that sum f_k + f_0 = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet<T> {
    pub order: usize,
    pub tuples: TupleSet,
    pub frequencies: Vec<T>,
    pub no_count_frequency: T,
    pub events: u64,
    pub seed: u64,
}

impl<T: Scalar> MeasurementSet<T> {
    pub fn new(
        tuples: TupleSet,
        frequencies: Vec<T>,
        no_count_frequency: T,
        events: u64,
        seed: u64,
    ) -> Result<Self> {
        if frequencies.len() != tuples.len() {
            return Err(CoreError::InvalidParameter("frequency count mismatch".into()));
        }
        if frequencies.iter().any(|&f| f < T::zero()) || no_count_frequency < T::zero() {
            return Err(CoreError::InvalidParameter("negative frequency".into()));
        }
        let total: T = frequencies.iter().copied().sum::<T>() + no_count_frequency;
        if (total - T::one()).abs() > T::of(1e-9) {
            return Err(CoreError::InvalidParameter(format!(
                "frequencies must sum to 1 with the no-counts bin; got {total}"
            )));
        }
        Ok(Self {
            order: tuples.order,
            tuples,
            frequencies,
            no_count_frequency,
            events,
            seed,
        })
    }
}
