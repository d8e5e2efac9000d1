use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Running per-dimension standardizer with raw and normalized clipping.
///
/// `normalize` clips raw values to `[-200, 200]`, standardizes with the
/// running statistics, then clips to `[-5, 5]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer<F> {
    sum: Vec<F>,
    sumsq: Vec<F>,
    count: F,
    mean: Vec<F>,
    std: Vec<F>,
    /// Lower bound on the standard deviation.
    pub eps: F,
    pub raw_clip: F,
    pub norm_clip: F,
}

impl<F: Scalar> Normalizer<F> {
    pub fn new(dim: usize) -> Self {
        Normalizer {
            sum: vec![F::zero(); dim],
            sumsq: vec![F::zero(); dim],
            count: F::zero(),
            mean: vec![F::zero(); dim],
            std: vec![F::one(); dim],
            eps: F::lit(0.01),
            raw_clip: F::lit(200.0),
            norm_clip: F::lit(5.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[F] {
        &self.mean
    }

    pub fn std(&self) -> &[F] {
        &self.std
    }

    pub fn count(&self) -> F {
        self.count
    }

    /// Folds a batch of raw observations into the statistics.
    pub fn update<'a, I>(&mut self, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a [F]>,
    {
        for row in rows {
            self.check(row.len())?;
            for (i, &x) in row.iter().enumerate() {
                let x = self.clip_raw(x);
                self.sum[i] += x;
                self.sumsq[i] += x * x;
            }
            self.count += F::one();
        }
        self.recompute();
        Ok(())
    }

    pub fn normalize(&self, obs: &[F]) -> Result<Vec<F>> {
        let mut out = vec![F::zero(); obs.len()];
        self.normalize_into(obs, &mut out)?;
        Ok(out)
    }

    pub fn normalize_into(&self, obs: &[F], out: &mut [F]) -> Result<()> {
        self.check(obs.len())?;
        for i in 0..obs.len() {
            let z = (self.clip_raw(obs[i]) - self.mean[i]) / self.std[i];
            out[i] = z.max(-self.norm_clip).min(self.norm_clip);
        }
        Ok(())
    }

    /// Raw accumulators `(sum, sumsq, count)`, as stored in checkpoints.
    pub fn raw_stats(&self) -> (&[F], &[F], F) {
        (&self.sum, &self.sumsq, self.count)
    }

    pub fn from_raw_stats(sum: Vec<F>, sumsq: Vec<F>, count: F) -> Result<Self> {
        if sum.len() != sumsq.len() {
            return Err(Error::Shape {
                expected: sum.len(),
                got: sumsq.len(),
            });
        }
        let mut n = Normalizer::new(sum.len());
        n.sum = sum;
        n.sumsq = sumsq;
        n.count = count;
        n.recompute();
        Ok(n)
    }

    fn recompute(&mut self) {
        if self.count <= F::zero() {
            return;
        }
        let floor = self.eps * self.eps;
        for i in 0..self.dim() {
            let m = self.sum[i] / self.count;
            let var = self.sumsq[i] / self.count - m * m;
            self.mean[i] = m;
            self.std[i] = var.max(floor).sqrt();
        }
    }

    fn clip_raw(&self, x: F) -> F {
        x.max(-self.raw_clip).min(self.raw_clip)
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}
