//! Gaussian kernel and the kernel-matrix cache used by the solver.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvddError};

/// A single data point. All observations in a data set share one length.
pub type Observation = Vec<f64>;

/// Above this many training points the solver stops materializing the full
/// kernel matrix and switches to an LRU row cache.
pub const FULL_CACHE_LIMIT: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    bandwidth: f64,
}

impl KernelParams {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(SvddError::Input(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(KernelParams { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Kernel value for a precomputed squared distance.
    #[inline]
    pub fn eval_sq_dist(&self, sq_dist: f64) -> f64 {
        (-sq_dist / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-||a - b||^2 / (2 s^2))`.
pub fn gaussian_kernel(a: &[f64], b: &[f64], params: &KernelParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SvddError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(params.eval_sq_dist(squared_distance(a, b)))
}

/// Dense symmetric kernel matrix, row-major.
pub fn kernel_matrix(data: &[Observation], params: &KernelParams) -> Vec<f64> {
    let n = data.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let v = params.eval_sq_dist(squared_distance(&data[i], &data[j]));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Kernel rows on demand: a full matrix for small problems, LRU rows above
/// [`FULL_CACHE_LIMIT`].
pub(crate) struct KernelCache<'a> {
    data: &'a [Observation],
    params: KernelParams,
    storage: Storage,
}

enum Storage {
    Full(Vec<f64>),
    Lru(RowLru),
}

struct RowLru {
    capacity: usize,
    clock: u64,
    rows: HashMap<usize, (u64, Vec<f64>)>,
}

impl RowLru {
    fn touch(&mut self, i: usize, data: &[Observation], params: &KernelParams) {
        self.clock += 1;
        if let Some(entry) = self.rows.get_mut(&i) {
            entry.0 = self.clock;
            return;
        }
        if self.rows.len() >= self.capacity {
            let oldest = self
                .rows
                .iter()
                .min_by_key(|(_, (stamp, _))| *stamp)
                .map(|(&k, _)| k);
            if let Some(k) = oldest {
                self.rows.remove(&k);
            }
        }
        let row = data
            .iter()
            .map(|x| params.eval_sq_dist(squared_distance(&data[i], x)))
            .collect();
        self.rows.insert(i, (self.clock, row));
    }
}

impl<'a> KernelCache<'a> {
    pub(crate) fn new(data: &'a [Observation], params: KernelParams) -> Self {
        Self::with_limit(data, params, FULL_CACHE_LIMIT, 1024)
    }

    pub(crate) fn with_limit(
        data: &'a [Observation],
        params: KernelParams,
        full_limit: usize,
        lru_rows: usize,
    ) -> Self {
        let storage = if data.len() <= full_limit {
            Storage::Full(kernel_matrix(data, &params))
        } else {
            Storage::Lru(RowLru {
                capacity: lru_rows.max(2),
                clock: 0,
                rows: HashMap::new(),
            })
        };
        KernelCache {
            data,
            params,
            storage,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.data.len()
    }

    pub(crate) fn with_row<R>(&mut self, i: usize, f: impl FnOnce(&[f64]) -> R) -> R {
        let n = self.data.len();
        match &mut self.storage {
            Storage::Full(k) => f(&k[i * n..(i + 1) * n]),
            Storage::Lru(lru) => {
                lru.touch(i, self.data, &self.params);
                f(&lru.rows[&i].1)
            }
        }
    }

    pub(crate) fn with_rows<R>(
        &mut self,
        i: usize,
        j: usize,
        f: impl FnOnce(&[f64], &[f64]) -> R,
    ) -> R {
        let n = self.data.len();
        match &mut self.storage {
            Storage::Full(k) => f(&k[i * n..(i + 1) * n], &k[j * n..(j + 1) * n]),
            Storage::Lru(lru) => {
                lru.touch(i, self.data, &self.params);
                lru.touch(j, self.data, &self.params);
                f(&lru.rows[&i].1, &lru.rows[&j].1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(s: f64) -> KernelParams {
        KernelParams::new(s).unwrap()
    }

    #[test]
    fn identical_points_give_one() {
        let a = [0.3, -1.2, 4.0];
        assert_eq!(gaussian_kernel(&a, &a, &params(0.01)).unwrap(), 1.0);
    }

    #[test]
    fn exponent_of_minus_one() {
        // ||a-b||^2 = 2 s^2 with s = 1.5
        let a = [0.0];
        let b = [2.0f64.sqrt() * 1.5];
        let k = gaussian_kernel(&a, &b, &params(1.5)).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn three_four_five() {
        let k = gaussian_kernel(&[0.0, 0.0], &[3.0, 4.0], &params(5.0)).unwrap();
        assert!((k - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = gaussian_kernel(&[0.0], &[1.0, 2.0], &params(1.0)).unwrap_err();
        assert!(matches!(
            err,
            SvddError::DimensionMismatch {
                expected: 1,
                got: 2
            }
        ));
    }

    #[test]
    fn bandwidth_must_be_positive() {
        assert!(KernelParams::new(0.0).is_err());
        assert!(KernelParams::new(-1.0).is_err());
        assert!(KernelParams::new(f64::NAN).is_err());
        assert!(KernelParams::new(f64::INFINITY).is_err());
    }

    #[test]
    fn lru_rows_match_full_matrix() {
        let data: Vec<Observation> = (0..7)
            .map(|i| vec![i as f64 * 0.3, (i * i) as f64 * 0.1])
            .collect();
        let p = params(0.8);
        let mut full = KernelCache::new(&data, p);
        let mut lru = KernelCache::with_limit(&data, p, 3, 2);
        for (i, j) in [(0, 1), (5, 2), (0, 6), (3, 3), (1, 0)] {
            let a = full.with_rows(i, j, |r, s| (r.to_vec(), s.to_vec()));
            let b = lru.with_rows(i, j, |r, s| (r.to_vec(), s.to_vec()));
            assert_eq!(a, b);
        }
        assert_eq!(lru.len(), 7);
    }
}
