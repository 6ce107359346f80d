use serde::{Deserialize, Serialize};

use crate::error::{DmpError, Result};

/// Irregularly sampled multivariate series on a shared, strictly increasing
/// time grid.
///
/// `values[k][j]` is series `j` at `times[k]`. Entries with `mask[k][j] ==
/// false` are hidden from inference; their stored value (possibly NaN) is
/// kept untouched so held-out truths can still be scored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiSeriesDataset {
    names: Vec<String>,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
}

/// Values compare bitwise, so two NaN placeholders are equal.
impl PartialEq for MultiSeriesDataset {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self.times == other.times
            && self.mask == other.mask
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl MultiSeriesDataset {
    pub fn new(
        names: Vec<String>,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        mask: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let p = names.len();
        if p == 0 {
            return Err(DmpError::validation("dataset needs at least one series"));
        }
        if values.len() != times.len() || mask.len() != times.len() {
            return Err(DmpError::validation("times, values and mask lengths differ"));
        }
        for (k, (row, m)) in values.iter().zip(&mask).enumerate() {
            if row.len() != p || m.len() != p {
                return Err(DmpError::validation(format!("row {k} does not have {p} columns")));
            }
            for (v, &observed) in row.iter().zip(m) {
                if observed && !v.is_finite() {
                    return Err(DmpError::validation(format!(
                        "observed value at row {k} is not finite"
                    )));
                }
            }
        }
        for (k, w) in times.windows(2).enumerate() {
            if w[1] == w[0] {
                return Err(DmpError::DuplicateTimestamp { line: k as u64 + 2 });
            }
            if !(w[1] > w[0]) {
                return Err(DmpError::NonMonotoneTime { line: k as u64 + 2 });
            }
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(DmpError::validation("timestamps must be finite"));
        }
        Ok(Self {
            names,
            times,
            values,
            mask,
        })
    }

    /// Fully observed dataset with default series names `s1, s2, …`.
    pub fn fully_observed(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let p = values.first().map_or(0, Vec::len);
        let mask = vec![vec![true; p]; times.len()];
        Self::new(default_names(p), times, values, mask)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.mask
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_series(&self) -> usize {
        self.names.len()
    }

    pub fn is_observed(&self, k: usize, j: usize) -> bool {
        self.mask[k][j]
    }

    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.values[k][j]
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }

    /// `(time, value)` pairs of the observed entries of series `j`.
    pub fn series_observations(&self, j: usize) -> Vec<(f64, f64)> {
        (0..self.n_times())
            .filter(|&k| self.mask[k][j])
            .map(|k| (self.times[k], self.values[k][j]))
            .collect()
    }

    /// Observed values of series `j` as a single-series dataset.
    pub fn single_series(&self, j: usize) -> Result<Self> {
        let obs = self.series_observations(j);
        let (times, values): (Vec<f64>, Vec<Vec<f64>>) =
            obs.into_iter().map(|(t, v)| (t, vec![v])).unzip();
        let mask = vec![vec![true]; times.len()];
        Self::new(vec![self.names[j].clone()], times, values, mask)
    }

    /// Mean and population variance of the observed values of series `j`.
    pub fn observed_moments(&self, j: usize) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self.series_observations(j).into_iter().map(|(_, v)| v).collect();
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some((mean, var))
    }

    /// Copy with a different mask; stored values are unchanged.
    pub fn with_mask(&self, mask: Vec<Vec<bool>>) -> Result<Self> {
        Self::new(self.names.clone(), self.times.clone(), self.values.clone(), mask)
    }

    /// Copy with series reordered so new series `a` is old series `order[a]`.
    pub fn permute_series(&self, order: &[usize]) -> Result<Self> {
        let names = order.iter().map(|&j| self.names[j].clone()).collect();
        let values = self
            .values
            .iter()
            .map(|row| order.iter().map(|&j| row[j]).collect())
            .collect();
        let mask = self
            .mask
            .iter()
            .map(|row| order.iter().map(|&j| row[j]).collect())
            .collect();
        Self::new(names, self.times.clone(), values, mask)
    }

    /// Subtracts `offsets[j]` from every value of series `j`.
    pub fn shifted(&self, offsets: &[f64]) -> Self {
        let mut out = self.clone();
        for row in &mut out.values {
            for (v, o) in row.iter_mut().zip(offsets) {
                *v -= o;
            }
        }
        out
    }

    /// Multiplies every value of series `j` by `factors[j]`.
    pub fn scaled(&self, factors: &[f64]) -> Self {
        let mut out = self.clone();
        for row in &mut out.values {
            for (v, f) in row.iter_mut().zip(factors) {
                *v *= f;
            }
        }
        out
    }

    /// Copy with an extra fully-missing timestamp inserted at `time`.
    pub fn with_missing_time(&self, time: f64) -> Result<Self> {
        let pos = self.times.partition_point(|&t| t < time);
        let mut out = self.clone();
        out.times.insert(pos, time);
        out.values.insert(pos, vec![f64::NAN; self.n_series()]);
        out.mask.insert(pos, vec![false; self.n_series()]);
        Self::new(out.names, out.times, out.values, out.mask)
    }
}

pub(crate) fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("s{j}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_time_order() {
        let v = vec![vec![1.0]; 3];
        assert!(matches!(
            MultiSeriesDataset::fully_observed(vec![0.0, 2.0, 1.0], v.clone()),
            Err(DmpError::NonMonotoneTime { line: 3 })
        ));
        assert!(matches!(
            MultiSeriesDataset::fully_observed(vec![0.0, 1.0, 1.0], v),
            Err(DmpError::DuplicateTimestamp { line: 3 })
        ));
    }

    #[test]
    fn masked_values_may_be_nan() {
        let ds = MultiSeriesDataset::new(
            vec!["a".into(), "b".into()],
            vec![0.0, 1.0],
            vec![vec![1.0, f64::NAN], vec![2.0, 3.0]],
            vec![vec![true, false], vec![true, true]],
        )
        .unwrap();
        assert_eq!(ds.n_observed(), 3);
        assert_eq!(ds.series_observations(1), vec![(1.0, 3.0)]);
        let ins = ds.with_missing_time(0.5).unwrap();
        assert_eq!(ins.times(), &[0.0, 0.5, 1.0]);
        assert_eq!(ins.n_observed(), 3);
    }
}
