use serde::{Deserialize, Serialize};

/// Streaming per-dimension mean and variance (Chan's parallel merge).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunningNorm {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    pub std_floor: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim], std_floor: 1e-4 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> Vec<f64> {
        self.m2.iter().map(|m| if self.count > 0.0 { m / self.count } else { 1.0 }).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.var().into_iter().map(|v| v.sqrt().max(self.std_floor)).collect()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.update_batch(std::iter::once(x));
    }

    /// Merges the statistics of a batch of rows.
    pub fn update_batch<'a, I>(&mut self, rows: I)
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let d = self.dim();
        let mut n = 0.0;
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        for row in rows {
            assert_eq!(row.len(), d, "running norm dimension");
            n += 1.0;
            for i in 0..d {
                let delta = row[i] - mean[i];
                mean[i] += delta / n;
                m2[i] += delta * (row[i] - mean[i]);
            }
        }
        if n == 0.0 {
            return;
        }
        let total = self.count + n;
        for i in 0..d {
            let delta = mean[i] - self.mean[i];
            self.mean[i] += delta * n / total;
            self.m2[i] += m2[i] + delta * delta * self.count * n / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let std = self.std();
        x.iter().zip(&self.mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect()
    }

    /// Normalization for scalar streams.
    pub fn normalize_scalar(&self, x: f64) -> f64 {
        debug_assert_eq!(self.dim(), 1);
        (x - self.mean[0]) / self.std()[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_two_pass_statistics() {
        let data = [[1.0, 10.0], [2.0, 20.0], [4.0, 0.0], [8.0, -5.0]];
        let mut n = RunningNorm::new(2);
        n.update_batch(data[..1].iter().map(|r| &r[..]));
        n.update_batch(data[1..].iter().map(|r| &r[..]));
        assert!((n.mean()[0] - 3.75).abs() < 1e-12);
        let var0 = data.iter().map(|r| (r[0] - 3.75f64).powi(2)).sum::<f64>() / 4.0;
        assert!((n.var()[0] - var0).abs() < 1e-12);
    }

    #[test]
    fn empty_norm_is_identity() {
        let n = RunningNorm::new(2);
        assert_eq!(n.normalize(&[1.5, -2.0]), vec![1.5, -2.0]);
    }

    proptest! {
        #[test]
        fn batch_merge_is_order_independent(xs in prop::collection::vec(-100f64..100.0, 2..40), split in 0usize..40) {
            let split = split.min(xs.len());
            let rows: Vec<[f64; 1]> = xs.iter().map(|&x| [x]).collect();
            let mut a = RunningNorm::new(1);
            a.update_batch(rows[..split].iter().map(|r| &r[..]));
            a.update_batch(rows[split..].iter().map(|r| &r[..]));
            let mut b = RunningNorm::new(1);
            for r in rows.iter().rev() { b.update(r); }
            prop_assert!((a.mean()[0] - b.mean()[0]).abs() < 1e-9);
            prop_assert!((a.var()[0] - b.var()[0]).abs() < 1e-6 * (1.0 + b.var()[0]));
        }
    }
}
