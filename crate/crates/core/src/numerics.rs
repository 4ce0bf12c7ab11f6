//! Dense vector arithmetic, label histograms, divergences and the seeded RNG.
//!
//! Every reduction here sums left to right in index order, so results are
//! bit-reproducible for a given input.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Gamma, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Additive smoothing applied to every histogram bin before normalising.
pub const SMOOTHING_EPS: f64 = 1e-10;

/// Fixed-length vector of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vec64(Vec<f64>);

/// Flat model parameters; the unit of aggregation and distance math.
pub type ParamVector = Vec64;

impl Vec64 {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Vec64::new"));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Returns an error if any entry became NaN or infinite.
    pub fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dim(self.len(), other.len())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Self) -> Result<()> {
        check_dim(self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dim(self.len(), other.len())?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }
}

impl From<Vec64> for Vec<f64> {
    fn from(v: Vec64) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Euclidean distance between two equal-length vectors.
pub fn l2_distance(a: &Vec64, b: &Vec64) -> Result<f64> {
    Ok(squared_l2_distance(a, b)?.sqrt())
}

pub fn squared_l2_distance(a: &Vec64, b: &Vec64) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(squared_distance(&a.0, &b.0))
}

/// Cosine of the angle between `a` and `b`, clamped into `[-1, 1]`.
pub fn cosine_similarity(a: &Vec64, b: &Vec64) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("cosine similarity of a zero-norm vector"));
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

/// Per-class label counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    bins: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: Vec<u64>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::Empty("histogram needs at least one class"));
        }
        Ok(Self { bins })
    }

    pub fn zeros(num_classes: usize) -> Result<Self> {
        Self::new(vec![0; num_classes])
    }

    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn num_classes(&self) -> usize {
        self.bins.len()
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Normalised distribution after adding [`SMOOTHING_EPS`] to every bin.
    pub fn smoothed(&self) -> Vec<f64> {
        let denom = self.total() as f64 + SMOOTHING_EPS * self.bins.len() as f64;
        self.bins
            .iter()
            .map(|&c| (c as f64 + SMOOTHING_EPS) / denom)
            .collect()
    }
}

fn check_pair(p: &Histogram, q: &Histogram) -> Result<()> {
    check_dim(p.num_classes(), q.num_classes())?;
    if p.total() == 0 || q.total() == 0 {
        return Err(Error::Empty("divergence of an empty histogram"));
    }
    Ok(())
}

fn kl_base2(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .fold(0.0, |acc, (&pi, &qi)| acc + pi * (pi / qi).log2())
}

/// KL(p || q) in bits, on smoothed distributions.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    check_pair(p, q)?;
    Ok(kl_base2(&p.smoothed(), &q.smoothed()).max(0.0))
}

/// Jensen-Shannon divergence in bits; lies in `[0, 1]`.
pub fn jsd(p: &Histogram, q: &Histogram) -> Result<f64> {
    check_pair(p, q)?;
    let (ps, qs) = (p.smoothed(), q.smoothed());
    let m: Vec<f64> = ps.iter().zip(&qs).map(|(a, b)| 0.5 * (a + b)).collect();
    let value = 0.5 * kl_base2(&ps, &m) + 0.5 * kl_base2(&qs, &m);
    Ok(value.clamp(0.0, 1.0))
}

/// Xoshiro256++ generator with explicit seeding and deterministic child streams.
///
/// Child streams are derived by SplitMix64-mixing the parent seed with a
/// sequence of stream identifiers, so independent phases of a run never share
/// or shift each other's draws.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Generator for the stream identified by `(seed, ids...)`.
    pub fn derive(seed: u64, ids: &[u64]) -> Self {
        let mixed = ids
            .iter()
            .fold(splitmix64(seed), |h, &id| splitmix64(h ^ splitmix64(id)));
        Self::new(mixed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn gamma(&mut self, shape: f64) -> f64 {
        let dist = Gamma::new(shape, 1.0).expect("gamma shape must be positive");
        self.inner.sample(dist)
    }

    /// Symmetric Dirichlet(alpha) draw over `k` categories.
    ///
    /// Falls back to a single category chosen uniformly when every gamma draw
    /// underflows, which happens for very small `alpha`.
    pub fn dirichlet(&mut self, alpha: f64, k: usize) -> Vec<f64> {
        let draws: Vec<f64> = (0..k).map(|_| self.gamma(alpha)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            draws.into_iter().map(|g| g / total).collect()
        } else {
            let hot = self.below(k);
            (0..k).map(|i| if i == hot { 1.0 } else { 0.0 }).collect()
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut target = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if target < w {
                return i;
            }
            target -= w;
        }
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}
