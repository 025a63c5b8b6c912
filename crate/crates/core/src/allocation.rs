use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::Scalar;

/// Sampling probabilities over arms for one epoch, either one row per context
/// or a single row shared by all contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochAllocation<T> {
    pub epoch: usize,
    probs: Mat<T>,
    shared: bool,
}

impl<T: Scalar> EpochAllocation<T> {
    fn row_tolerance() -> T {
        T::lit(1e-9).max(T::epsilon() * T::lit(256.0))
    }

    /// Builds from rows, validating that each row is a probability vector.
    pub fn new(epoch: usize, rows: Vec<Vec<T>>, shared: bool) -> Result<Self> {
        let probs = Mat::from_rows(&rows)?;
        if probs.rows() == 0 || probs.cols() == 0 {
            return Err(Error::InvalidAllocation("empty allocation".into()));
        }
        if shared && probs.rows() != 1 {
            return Err(Error::InvalidAllocation(
                "a shared allocation has exactly one row".into(),
            ));
        }
        let tol = Self::row_tolerance();
        for (r, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= -tol)) {
                return Err(Error::InvalidAllocation(format!("row {r} has a negative entry")));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return Err(Error::InvalidAllocation(format!(
                    "row {r} sums to {s}, not 1"
                )));
            }
        }
        Ok(EpochAllocation {
            epoch,
            probs,
            shared,
        })
    }

    pub fn shared(epoch: usize, row: Vec<T>) -> Result<Self> {
        Self::new(epoch, vec![row], true)
    }

    pub fn uniform(epoch: usize, num_arms: usize) -> Self {
        let p = T::one() / T::from_usize_lossy(num_arms);
        EpochAllocation {
            epoch,
            probs: Mat::from_fn(1, num_arms, |_, _| p),
            shared: true,
        }
    }

    /// Point mass on `arm` for every context.
    pub fn point_mass(epoch: usize, num_arms: usize, arm: usize) -> Self {
        EpochAllocation {
            epoch,
            probs: Mat::from_fn(1, num_arms, |_, a| if a == arm { T::one() } else { T::zero() }),
            shared: true,
        }
    }

    pub(crate) fn from_mat_unchecked(epoch: usize, probs: Mat<T>, shared: bool) -> Self {
        EpochAllocation {
            epoch,
            probs,
            shared,
        }
    }

    #[inline]
    pub fn prob(&self, context: usize, arm: usize) -> T {
        let r = if self.shared { 0 } else { context };
        self.probs[(r, arm)]
    }

    #[inline]
    pub fn row(&self, context: usize) -> &[T] {
        self.probs.row(if self.shared { 0 } else { context })
    }

    pub fn num_arms(&self) -> usize {
        self.probs.cols()
    }

    pub fn num_rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn probs(&self) -> &Mat<T> {
        &self.probs
    }

    /// Row for every context, expanding a shared row.
    pub fn expanded(&self, num_contexts: usize) -> Vec<Vec<T>> {
        (0..num_contexts).map(|x| self.row(x).to_vec()).collect()
    }

    pub fn to_record(&self, num_contexts: usize) -> PlanRecord<T> {
        PlanRecord {
            epoch: self.epoch,
            contexts: (0..num_contexts).collect(),
            probs: self.expanded(num_contexts),
        }
    }
}

/// Serialized form of one epoch's allocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord<T> {
    pub epoch: usize,
    pub contexts: Vec<usize>,
    pub probs: Vec<Vec<T>>,
}

impl<T: Scalar> PlanRecord<T> {
    pub fn into_allocation(self) -> Result<EpochAllocation<T>> {
        if self.contexts.len() != self.probs.len() {
            return Err(Error::DimensionMismatch {
                what: "plan contexts",
                expected: self.contexts.len(),
                found: self.probs.len(),
            });
        }
        let mut order: Vec<usize> = (0..self.contexts.len()).collect();
        order.sort_by_key(|&i| self.contexts[i]);
        let rows = order.iter().map(|&i| self.probs[i].clone()).collect();
        EpochAllocation::new(self.epoch, rows, false)
    }
}

/// Allocations for the remaining epochs `t..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationPlan<T> {
    pub epochs: Vec<EpochAllocation<T>>,
}

impl<T: Scalar> AllocationPlan<T> {
    pub fn first(&self) -> Option<&EpochAllocation<T>> {
        self.epochs.first()
    }

    pub fn to_records(&self, num_contexts: usize) -> Vec<PlanRecord<T>> {
        self.epochs.iter().map(|e| e.to_record(num_contexts)).collect()
    }
}

/// Softmax of each row of `logits`.
pub fn softmax_rows<T: Scalar>(logits: &Mat<T>) -> Mat<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}
