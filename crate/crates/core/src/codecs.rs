//! Composable codecs: (push, pop) pairs that are inverses by construction.
//!
//! Primitive codecs cover uniform, categorical, Bernoulli, discretized
//! Gaussian/logistic observation and Gaussian bucket-index coding;
//! combinators sequence codecs, apply them to lane views of a vectorized
//! message, and assemble the bits-back pattern for latent-variable models.

use crate::discretize::{std_logistic_cdf, std_normal_cdf, DiscretizationGrid};
use crate::error::CoderError;
use crate::rans::{Message, QuantizedDistribution, SymbolModel};
use crate::vrans::{pop_uniform_bits, push_uniform_bits, UniformModel, VMessage};

/// An invertible (push, pop) pair over scalar messages.
///
/// Laws: `pop(push(m, v)) == (m, v)` and `push(pop(m)) == m`, bit-exactly.
pub trait Codec {
    type Value;
    fn push(&self, m: &mut Message, v: &Self::Value) -> Result<(), CoderError>;
    fn pop(&self, m: &mut Message) -> Result<Self::Value, CoderError>;
}

/// Uniform codec over `[0, 2^bits)`. Wide values are chunked so any `bits`
/// works at any message precision.
#[derive(Debug, Clone, Copy)]
pub struct UniformCodec {
    bits: u32,
}

impl UniformCodec {
    pub fn new(bits: u32) -> Self {
        UniformCodec { bits }
    }
}

impl Codec for UniformCodec {
    type Value = u64;

    fn push(&self, m: &mut Message, v: &u64) -> Result<(), CoderError> {
        push_uniform_bits(m, *v, self.bits)
    }

    fn pop(&self, m: &mut Message) -> Result<u64, CoderError> {
        pop_uniform_bits(m, self.bits)
    }
}

/// Categorical codec over symbol indices `0..I`.
#[derive(Debug, Clone)]
pub struct CategoricalCodec {
    dist: QuantizedDistribution,
}

impl CategoricalCodec {
    pub fn new(weights: &[u64], r: u32) -> Result<Self, CoderError> {
        Ok(CategoricalCodec {
            dist: QuantizedDistribution::new(weights, r)?,
        })
    }

    pub fn from_dist(dist: QuantizedDistribution) -> Self {
        CategoricalCodec { dist }
    }

    pub fn dist(&self) -> &QuantizedDistribution {
        &self.dist
    }
}

impl Codec for CategoricalCodec {
    type Value = u64;

    fn push(&self, m: &mut Message, v: &u64) -> Result<(), CoderError> {
        m.push(*v, &self.dist)
    }

    fn pop(&self, m: &mut Message) -> Result<u64, CoderError> {
        m.pop(&self.dist)
    }
}

/// Bernoulli codec over `{0, 1}`: a two-symbol categorical where the weight
/// of symbol 1 is `p1_weight / 2^r`.
pub fn bernoulli_codec(p1_weight: u64, r: u32) -> Result<CategoricalCodec, CoderError> {
    let total = 1u64 << r;
    if p1_weight == 0 || p1_weight >= total {
        return Err(CoderError::InvalidDistribution(format!(
            "bernoulli weight {p1_weight} outside (0, 2^{r})"
        )));
    }
    CategoricalCodec::new(&[total - p1_weight, p1_weight], r)
}

/// Quantize real probabilities to integer weights summing to `2^r`:
/// scale, floor, clamp to >= 1, then repair the deficit or surplus on the
/// largest-mass bucket.
pub fn quantize_probs(probs: &[f64], r: u32) -> Result<Vec<u64>, CoderError> {
    let total = 1u64 << r;
    if probs.is_empty() || probs.len() as u64 > total / 2 {
        return Err(CoderError::InvalidDistribution(format!(
            "cannot quantize {} probabilities at precision {r}",
            probs.len()
        )));
    }
    let mut weights: Vec<u64> = probs
        .iter()
        .map(|&p| {
            if !(p >= 0.0) {
                return Err(CoderError::InvalidDistribution(format!(
                    "negative or NaN probability {p}"
                )));
            }
            Ok(((p * total as f64).floor() as u64).max(1))
        })
        .collect::<Result<_, _>>()?;
    let sum: u64 = weights.iter().sum();
    let largest = (0..weights.len())
        .max_by_key(|&i| weights[i])
        .expect("non-empty");
    if sum <= total {
        weights[largest] += total - sum;
    } else {
        let surplus = sum - total;
        if weights[largest] <= surplus {
            return Err(CoderError::InvalidDistribution(
                "probabilities too diffuse to repair at this precision".into(),
            ));
        }
        weights[largest] -= surplus;
    }
    Ok(weights)
}

/// Lazy discretized Gaussian over the buckets of an equal-prior-mass grid.
///
/// Bucket masses come from a fixed cumulative construction
/// `C(i) = floor(cdf(boundary_i) * (2^r - 2^r_q)) + i`, which is strictly
/// increasing, pins every mass at >= 1 and sums to `2^r` exactly, with no
/// table over the `2^r_q` buckets ever materialized.
#[derive(Debug, Clone, Copy)]
pub struct GaussianIndexCodec {
    grid: DiscretizationGrid,
    mu: f64,
    sigma: f64,
    r: u32,
}

impl GaussianIndexCodec {
    pub fn new(
        mu: f64,
        sigma: f64,
        grid: DiscretizationGrid,
        r: u32,
    ) -> Result<Self, CoderError> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(CoderError::InvalidDistribution(format!(
                "gaussian index codec needs sigma > 0, got mu={mu} sigma={sigma}"
            )));
        }
        if r > 32 || grid.index_precision() > r {
            return Err(CoderError::InvalidPrecisions(format!(
                "need r_q <= r <= 32, got r_q={} r={r}",
                grid.index_precision()
            )));
        }
        Ok(GaussianIndexCodec { grid, mu, sigma, r })
    }

    pub fn precision_bits(&self) -> u32 {
        self.r
    }

    fn span(&self) -> u64 {
        (1u64 << self.r) - self.grid.buckets()
    }

    /// Cumulative mass below bucket `i` (so `cum(0) = 0`,
    /// `cum(2^r_q) = 2^r`).
    pub fn cum(&self, i: u64) -> u64 {
        if i == 0 {
            return 0;
        }
        if i >= self.grid.buckets() {
            return 1u64 << self.r;
        }
        let z = (self.grid.boundary(i) - self.mu) / self.sigma;
        (std_normal_cdf(z) * self.span() as f64).floor() as u64 + i
    }

    pub fn mass(&self, i: u64) -> u64 {
        self.cum(i + 1) - self.cum(i)
    }
}

impl SymbolModel for GaussianIndexCodec {
    fn precision(&self) -> u32 {
        self.r
    }

    fn forward(&self, s_bar: u64) -> (u64, u64, u64) {
        // binary search: invariant cum(lo) <= s_bar < cum(hi)
        let mut lo = 0u64;
        let mut hi = self.grid.buckets();
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.cum(mid) <= s_bar {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = self.cum(lo);
        (lo, c, self.cum(lo + 1) - c)
    }

    fn backward(&self, x: u64) -> (u64, u64) {
        let c = self.cum(x);
        (c, self.cum(x + 1) - c)
    }
}

impl Codec for GaussianIndexCodec {
    type Value = u64;

    fn push(&self, m: &mut Message, v: &u64) -> Result<(), CoderError> {
        m.push(*v, self)
    }

    fn pop(&self, m: &mut Message) -> Result<u64, CoderError> {
        m.pop(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfKernel {
    Gaussian,
    Logistic,
}

/// Discretized observation codec over the integers `[lo, hi]`:
/// `mass(x) ~ F(x + 1/2) - F(x - 1/2)` with the tails folded into the
/// endpoints, quantized to weights summing to `2^r`.
#[derive(Debug, Clone)]
pub struct DiscretizedObsCodec {
    lo: i64,
    dist: QuantizedDistribution,
}

impl DiscretizedObsCodec {
    pub fn new(
        mu: f64,
        sigma: f64,
        lo: i64,
        hi: i64,
        r: u32,
        kernel: CdfKernel,
    ) -> Result<Self, CoderError> {
        if hi < lo {
            return Err(CoderError::InvalidDistribution(format!(
                "empty range [{lo}, {hi}]"
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(CoderError::InvalidDistribution(format!(
                "discretized obs codec needs sigma > 0, got mu={mu} sigma={sigma}"
            )));
        }
        let cdf = |x: f64| -> f64 {
            let z = (x - mu) / sigma;
            match kernel {
                CdfKernel::Gaussian => std_normal_cdf(z),
                CdfKernel::Logistic => std_logistic_cdf(z),
            }
        };
        let n = (hi - lo + 1) as usize;
        let mut probs = Vec::with_capacity(n);
        for x in lo..=hi {
            let upper = if x == hi { 1.0 } else { cdf(x as f64 + 0.5) };
            let lower = if x == lo { 0.0 } else { cdf(x as f64 - 0.5) };
            probs.push((upper - lower).max(0.0));
        }
        let weights = quantize_probs(&probs, r)?;
        Ok(DiscretizedObsCodec {
            lo,
            dist: QuantizedDistribution::new(&weights, r)?,
        })
    }

    pub fn dist(&self) -> &QuantizedDistribution {
        &self.dist
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    /// Information content of observing `x`, in bits.
    pub fn info_content(&self, x: i64) -> f64 {
        self.dist.info_content((x - self.lo) as usize)
    }
}

impl Codec for DiscretizedObsCodec {
    type Value = i64;

    fn push(&self, m: &mut Message, v: &i64) -> Result<(), CoderError> {
        let idx = v.checked_sub(self.lo).filter(|&i| (i as usize) < self.dist.len());
        let idx = idx.ok_or_else(|| {
            CoderError::Format(format!("value {v} outside codec range"))
        })?;
        m.push(idx as u64, &self.dist)
    }

    fn pop(&self, m: &mut Message) -> Result<i64, CoderError> {
        Ok(self.lo + m.pop(&self.dist)? as i64)
    }
}

/// Sequences component codecs: values push in forward order and pop in
/// reverse, so the decoded tuple equals the encoded tuple.
#[derive(Debug, Clone)]
pub struct SerialCodec<C> {
    parts: Vec<C>,
}

impl<C> SerialCodec<C> {
    pub fn new(parts: Vec<C>) -> Self {
        SerialCodec { parts }
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }
}

impl<C: Codec> Codec for SerialCodec<C> {
    type Value = Vec<C::Value>;

    fn push(&self, m: &mut Message, vs: &Vec<C::Value>) -> Result<(), CoderError> {
        if vs.len() != self.parts.len() {
            return Err(CoderError::Format(format!(
                "tuple arity {} != codec arity {}",
                vs.len(),
                self.parts.len()
            )));
        }
        for (codec, v) in self.parts.iter().zip(vs) {
            codec.push(m, v)?;
        }
        Ok(())
    }

    fn pop(&self, m: &mut Message) -> Result<Vec<C::Value>, CoderError> {
        let mut out = Vec::with_capacity(self.parts.len());
        for codec in self.parts.iter().rev() {
            out.push(codec.pop(m)?);
        }
        out.reverse();
        Ok(out)
    }
}

/// The bits-back combinator: given codecs for the prior, likelihood and
/// approximate posterior, yields a codec for the data whose expected cost
/// is the negative evidence lower bound.
pub struct BbAnsCodec<P, FL, FQ> {
    prior: P,
    likelihood: FL,
    posterior: FQ,
}

impl<P, FL, FQ, L, Q, Z, X> BbAnsCodec<P, FL, FQ>
where
    P: Codec<Value = Z>,
    L: Codec<Value = X>,
    Q: Codec<Value = Z>,
    FL: Fn(&Z) -> L,
    FQ: Fn(&X) -> Q,
{
    pub fn new(prior: P, likelihood: FL, posterior: FQ) -> Self {
        BbAnsCodec {
            prior,
            likelihood,
            posterior,
        }
    }
}

impl<P, FL, FQ, L, Q, Z, X> Codec for BbAnsCodec<P, FL, FQ>
where
    P: Codec<Value = Z>,
    L: Codec<Value = X>,
    Q: Codec<Value = Z>,
    FL: Fn(&Z) -> L,
    FQ: Fn(&X) -> Q,
{
    type Value = X;

    fn push(&self, m: &mut Message, x: &X) -> Result<(), CoderError> {
        let z = (self.posterior)(x).pop(m)?;
        (self.likelihood)(&z).push(m, x)?;
        self.prior.push(m, &z)
    }

    fn pop(&self, m: &mut Message) -> Result<X, CoderError> {
        let z = self.prior.pop(m)?;
        let x = (self.likelihood)(&z).pop(m)?;
        (self.posterior)(&x).push(m, &z)?;
        Ok(x)
    }
}

/// A lossless lane selection of a vectorized message: a permutation or
/// partition fragment given by explicit, distinct lane indices. The inverse
/// is structural, so view-wrapped codecs stay exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct View {
    indices: Vec<usize>,
}

impl View {
    pub fn new(indices: Vec<usize>) -> Result<Self, CoderError> {
        let mut seen = indices.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != indices.len() {
            return Err(CoderError::Format("view indices must be distinct".into()));
        }
        Ok(View { indices })
    }

    pub fn identity(k: usize) -> Self {
        View {
            indices: (0..k).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `self` after `inner`: selects `self.indices[inner.indices[i]]`.
    pub fn compose(&self, inner: &View) -> Result<View, CoderError> {
        let indices = inner
            .indices
            .iter()
            .map(|&i| {
                self.indices.get(i).copied().ok_or_else(|| {
                    CoderError::Format(format!("view index {i} out of range"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        View::new(indices)
    }
}

/// An invertible (push, pop) pair over selected lanes of a vectorized
/// message.
pub trait VCodec {
    /// Number of lanes (and symbols) this codec touches.
    fn width(&self) -> usize;
    fn push_lanes(
        &self,
        m: &mut VMessage,
        lanes: &[usize],
        xs: &[u64],
    ) -> Result<(), CoderError>;
    fn pop_lanes(&self, m: &mut VMessage, lanes: &[usize]) -> Result<Vec<u64>, CoderError>;

    fn push(&self, m: &mut VMessage, xs: &[u64]) -> Result<(), CoderError> {
        let lanes: Vec<usize> = (0..self.width()).collect();
        self.push_lanes(m, &lanes, xs)
    }

    fn pop(&self, m: &mut VMessage) -> Result<Vec<u64>, CoderError> {
        let lanes: Vec<usize> = (0..self.width()).collect();
        self.pop_lanes(m, &lanes)
    }
}

/// Same distribution on every lane.
#[derive(Debug, Clone)]
pub struct IidVCodec<D> {
    dist: D,
    width: usize,
}

impl<D: SymbolModel> IidVCodec<D> {
    pub fn new(dist: D, width: usize) -> Self {
        IidVCodec { dist, width }
    }
}

impl<D: SymbolModel + Clone> VCodec for IidVCodec<D> {
    fn width(&self) -> usize {
        self.width
    }

    fn push_lanes(
        &self,
        m: &mut VMessage,
        lanes: &[usize],
        xs: &[u64],
    ) -> Result<(), CoderError> {
        m.vpush_lanes(lanes, xs, std::slice::from_ref(&self.dist))
    }

    fn pop_lanes(&self, m: &mut VMessage, lanes: &[usize]) -> Result<Vec<u64>, CoderError> {
        m.vpop_lanes(lanes, std::slice::from_ref(&self.dist))
    }
}

/// One distribution per lane.
#[derive(Debug, Clone)]
pub struct PerLaneVCodec<D> {
    dists: Vec<D>,
}

impl<D: SymbolModel> PerLaneVCodec<D> {
    pub fn new(dists: Vec<D>) -> Self {
        PerLaneVCodec { dists }
    }
}

impl<D: SymbolModel + Clone> VCodec for PerLaneVCodec<D> {
    fn width(&self) -> usize {
        self.dists.len()
    }

    fn push_lanes(
        &self,
        m: &mut VMessage,
        lanes: &[usize],
        xs: &[u64],
    ) -> Result<(), CoderError> {
        m.vpush_lanes(lanes, xs, &self.dists)
    }

    fn pop_lanes(&self, m: &mut VMessage, lanes: &[usize]) -> Result<Vec<u64>, CoderError> {
        m.vpop_lanes(lanes, &self.dists)
    }
}

/// Applies `inner` to the lanes selected by `view`; other lanes are
/// untouched.
pub struct Substack<C> {
    inner: C,
    view: View,
}

impl<C: VCodec> Substack<C> {
    pub fn new(inner: C, view: View) -> Result<Self, CoderError> {
        if inner.width() != view.len() {
            return Err(CoderError::Format(format!(
                "codec width {} != view width {}",
                inner.width(),
                view.len()
            )));
        }
        Ok(Substack { inner, view })
    }
}

impl<C: VCodec> VCodec for Substack<C> {
    fn width(&self) -> usize {
        self.view.len()
    }

    fn push_lanes(
        &self,
        m: &mut VMessage,
        lanes: &[usize],
        xs: &[u64],
    ) -> Result<(), CoderError> {
        // lanes are relative to this codec's width; map through the view
        let absolute: Vec<usize> = lanes.iter().map(|&i| self.view.indices()[i]).collect();
        self.inner.push_lanes(m, &absolute, xs)
    }

    fn pop_lanes(&self, m: &mut VMessage, lanes: &[usize]) -> Result<Vec<u64>, CoderError> {
        let absolute: Vec<usize> = lanes.iter().map(|&i| self.view.indices()[i]).collect();
        self.inner.pop_lanes(m, &absolute)
    }
}

/// Convenience constructor mirroring the combinator name.
pub fn substack<C: VCodec>(inner: C, view: View) -> Result<Substack<C>, CoderError> {
    Substack::new(inner, view)
}

/// A uniform lane codec, handy as a building block in vector pipelines.
pub fn uniform_lane_codec(bits: u32, width: usize) -> IidVCodec<UniformModel> {
    IidVCodec::new(UniformModel::new(bits), width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rans::Precisions;
    use crate::vrans::push_uniform_bits;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn prec16() -> Precisions {
        Precisions::new(16, 8, 3).unwrap()
    }

    fn seeded_message(prec: Precisions, words: usize, seed: u64) -> Message {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut m = Message::init(prec);
        for _ in 0..words {
            push_uniform_bits(&mut m, rng.gen::<u64>() & ((1 << prec.r_t) - 1), prec.r_t)
                .unwrap();
        }
        m
    }

    #[test]
    fn uniform_push_example() {
        let mut m = Message::init(prec16());
        assert_eq!(m.head(), 256);
        UniformCodec::new(2).push(&mut m, &3).unwrap();
        assert_eq!(m.head(), 1027); // 4 * 256 + 3
    }

    #[test]
    fn uniform_zero_bits_is_identity() {
        let mut m = Message::init(prec16());
        let before = m.clone();
        UniformCodec::new(0).push(&mut m, &0).unwrap();
        assert_eq!(m, before);
        assert_eq!(UniformCodec::new(0).pop(&mut m).unwrap(), 0);
        assert_eq!(m, before);
    }

    #[test]
    fn uniform_pop_is_uniform() {
        let prec = Precisions::DEFAULT;
        let mut m = seeded_message(prec, 4000, 42);
        let codec = UniformCodec::new(3);
        let mut counts = [0u64; 8];
        for _ in 0..20_000 {
            counts[codec.pop(&mut m).unwrap() as usize] += 1;
        }
        for &c in &counts {
            let expected = 20_000.0 / 8.0;
            assert!((c as f64 - expected).abs() < 5.0 * expected.sqrt());
        }
    }

    #[test]
    fn bernoulli_push_example() {
        let mut m = Message::init(prec16());
        let codec = bernoulli_codec(3, 3).unwrap(); // weights (5, 3)
        codec.push(&mut m, &1).unwrap();
        assert_eq!(m.head(), 686); // 8 * (256 / 3) + 1 + 5
    }

    #[test]
    fn bernoulli_half_equals_uniform_one_bit() {
        let prec = Precisions::DEFAULT;
        let bern = bernoulli_codec(1, 1).unwrap();
        let unif = UniformCodec::new(1);
        let mut ma = seeded_message(prec, 50, 9);
        let mut mb = ma.clone();
        for x in [0u64, 1, 1, 0, 1] {
            bern.push(&mut ma, &x).unwrap();
            unif.push(&mut mb, &x).unwrap();
        }
        assert_eq!(ma, mb);
    }

    #[test]
    fn bernoulli_rare_symbol_costs_r_bits() {
        let r = 12;
        let codec = bernoulli_codec(1, r).unwrap();
        let mut m = seeded_message(Precisions::DEFAULT, 10, 4);
        let before = m.effective_length();
        codec.push(&mut m, &1).unwrap();
        let cost = m.effective_length() - before;
        assert!((cost - r as f64).abs() < 0.01, "cost {cost}");
    }

    #[test]
    fn categorical_rate_near_entropy() {
        let prec = Precisions::DEFAULT;
        let codec = CategoricalCodec::new(&[1, 2, 3, 2], 3).unwrap();
        let h = codec.dist().entropy();
        assert!((h - 1.9056).abs() < 0.002);
        let n = 100_000;
        let mut rng = StdRng::seed_from_u64(17);
        let mut m = Message::init(prec);
        for _ in 0..n {
            let s_bar = rng.gen_range(0..8u64);
            let (x, _, _) = codec.dist().forward(s_bar);
            codec.push(&mut m, &x).unwrap();
        }
        let bits = m.length_bits() as f64;
        let target = n as f64 * h + 64.0;
        assert!(bits <= target * 1.001, "bits {bits} vs target {target}");
    }

    #[test]
    fn quantize_probs_repairs_total() {
        let w = quantize_probs(&[0.2, 0.3, 0.5], 10).unwrap();
        assert_eq!(w.iter().sum::<u64>(), 1024);
        assert!(w.iter().all(|&x| x >= 1));
        // tiny probabilities are clamped up
        let w = quantize_probs(&[1e-12, 1.0 - 1e-12], 8).unwrap();
        assert_eq!(w, vec![1, 255]);
    }

    #[test]
    fn gaussian_index_prior_masses_equal() {
        let grid = DiscretizationGrid::new(0.0, 1.0, 4).unwrap();
        let codec = GaussianIndexCodec::new(0.0, 1.0, grid, 16).unwrap();
        for i in 0..16 {
            assert_eq!(codec.mass(i), 1 << 12, "bucket {i}");
        }
    }

    #[test]
    fn gaussian_index_concentrated_posterior() {
        let grid = DiscretizationGrid::new(0.0, 1.0, 2).unwrap();
        let codec = GaussianIndexCodec::new(1.0, 0.01, grid, 16).unwrap();
        let masses: Vec<u64> = (0..4).map(|i| codec.mass(i)).collect();
        assert_eq!(masses, vec![1, 1, 1, 65533]);
    }

    #[test]
    fn gaussian_index_symmetry() {
        let grid = DiscretizationGrid::new(0.0, 1.0, 6).unwrap();
        let codec = GaussianIndexCodec::new(0.0, 0.8, grid, 16).unwrap();
        let total: u64 = (0..64).map(|i| codec.mass(i)).sum();
        assert_eq!(total, 1 << 16);
        // floors break exact symmetry by at most one unit of mass
        for i in 0..64 {
            let (a, b) = (codec.mass(i), codec.mass(63 - i));
            assert!(a.abs_diff(b) <= 1, "bucket {i}: {a} vs {b}");
        }
    }

    #[test]
    fn gaussian_index_forward_consistent() {
        let grid = DiscretizationGrid::new(0.0, 1.0, 8).unwrap();
        let codec = GaussianIndexCodec::new(-0.4, 1.7, grid, 16).unwrap();
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..2000 {
            let s_bar = rng.gen_range(0..1u64 << 16);
            let (i, c, p) = codec.forward(s_bar);
            assert!(c <= s_bar && s_bar < c + p);
            assert_eq!(codec.backward(i), (c, p));
        }
    }

    #[test]
    fn gaussian_index_roundtrip() {
        let prec = Precisions::DEFAULT;
        let grid = DiscretizationGrid::new(0.0, 1.0, 8).unwrap();
        let codec = GaussianIndexCodec::new(0.3, 0.5, grid, 16).unwrap();
        let mut m = seeded_message(prec, 100, 5);
        let before = m.clone();
        let mut zs = Vec::new();
        for _ in 0..50 {
            zs.push(codec.pop(&mut m).unwrap());
        }
        for &z in zs.iter().rev() {
            codec.push(&mut m, &z).unwrap();
        }
        assert_eq!(m, before);
    }

    #[test]
    fn discretized_obs_limits() {
        // moderate sigma: entropy near the continuous Gaussian value
        let wide = DiscretizedObsCodec::new(127.5, 50.0, 0, 255, 16, CdfKernel::Gaussian).unwrap();
        let h = wide.dist().entropy();
        assert!(h > 7.0 && h < 8.0, "entropy {h}");
        // folded tails concentrate extra mass at the endpoints
        assert!(wide.dist().weight(0) > wide.dist().weight(1));
        // mu at lo, tiny sigma: mass at lo
        let tight = DiscretizedObsCodec::new(0.0, 0.01, 0, 255, 16, CdfKernel::Gaussian).unwrap();
        assert!(tight.dist().weight(0) > 60000);
    }

    #[test]
    fn discretized_obs_normalizes() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..50 {
            let mu = rng.gen_range(-10.0..265.0);
            let sigma = rng.gen_range(0.05..300.0);
            let kernel = if rng.gen() {
                CdfKernel::Gaussian
            } else {
                CdfKernel::Logistic
            };
            let codec = DiscretizedObsCodec::new(mu, sigma, 0, 255, 16, kernel).unwrap();
            assert_eq!(codec.dist().weights().iter().sum::<u64>(), 1 << 16);
        }
    }

    #[test]
    fn serial_codec_behaviour() {
        let prec = Precisions::DEFAULT;
        // empty sequence: identity
        let empty: SerialCodec<UniformCodec> = SerialCodec::new(vec![]);
        let mut m = Message::init(prec);
        let before = m.clone();
        empty.push(&mut m, &vec![]).unwrap();
        assert_eq!(m, before);

        // two 1-bit codecs cost 2 bits
        let two = SerialCodec::new(vec![UniformCodec::new(1), UniformCodec::new(1)]);
        let before = m.effective_length();
        two.push(&mut m, &vec![1, 0]).unwrap();
        assert!((m.effective_length() - before - 2.0).abs() < 1e-9);
        assert_eq!(two.pop(&mut m).unwrap(), vec![1, 0]);
    }

    #[test]
    fn serial_nesting_is_flat() {
        let prec = Precisions::DEFAULT;
        let flat = SerialCodec::new(vec![
            UniformCodec::new(2),
            UniformCodec::new(3),
            UniformCodec::new(5),
            UniformCodec::new(1),
        ]);
        let ab = SerialCodec::new(vec![UniformCodec::new(2), UniformCodec::new(3)]);
        let cd = SerialCodec::new(vec![UniformCodec::new(5), UniformCodec::new(1)]);
        let nested = SerialCodec::new(vec![ab, cd]);
        let mut ma = Message::init(prec);
        let mut mb = Message::init(prec);
        flat.push(&mut ma, &vec![3, 6, 19, 1]).unwrap();
        nested.push(&mut mb, &vec![vec![3, 6], vec![19, 1]]).unwrap();
        assert_eq!(ma.flatten(), mb.flatten());
    }

    #[test]
    fn bbans_all_uniform_net_one_bit() {
        let prec = Precisions::DEFAULT;
        let codec = BbAnsCodec::new(
            UniformCodec::new(1),
            |_z: &u64| UniformCodec::new(1),
            |_x: &u64| UniformCodec::new(1),
        );
        let mut m = seeded_message(prec, 100, 77);
        let before = m.effective_length();
        let mut xs = Vec::new();
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..200 {
            let x = rng.gen_range(0..2u64);
            codec.push(&mut m, &x).unwrap();
            xs.push(x);
        }
        let net = m.effective_length() - before;
        assert!((net - 200.0).abs() < 1e-6, "net {net}");
        for &x in xs.iter().rev() {
            assert_eq!(codec.pop(&mut m).unwrap(), x);
        }
    }

    #[test]
    fn bbans_deterministic_posterior() {
        let prec = Precisions::DEFAULT;
        // posterior puts all mass on z = 0: zero bits back
        let codec = BbAnsCodec::new(
            CategoricalCodec::new(&[4, 4], 3).unwrap(),
            |_z: &u64| CategoricalCodec::new(&[2, 6], 3).unwrap(),
            |_x: &u64| CategoricalCodec::new(&[8], 3).unwrap(),
        );
        let mut m = Message::init(prec);
        let before = m.effective_length();
        codec.push(&mut m, &1).unwrap();
        let cost = m.effective_length() - before;
        // h(x|z) + h(z) = log2(8/6) + 1
        let expect = (8f64 / 6.0).log2() + 1.0;
        assert!((cost - expect).abs() < 1e-4, "cost {cost} vs {expect}");
        assert_eq!(codec.pop(&mut m).unwrap(), 1);
    }

    #[test]
    fn substack_identity_view() {
        let prec = Precisions::DEFAULT;
        let d = QuantizedDistribution::new(&[1, 3], 2).unwrap();
        let plain = IidVCodec::new(d.clone(), 4);
        let viewed = substack(IidVCodec::new(d, 4), View::identity(4)).unwrap();
        let mut ma = VMessage::init(4, prec).unwrap();
        let mut mb = ma.clone();
        plain.push(&mut ma, &[1, 0, 1, 1]).unwrap();
        viewed.push(&mut mb, &[1, 0, 1, 1]).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn substack_disjoint_views_commute() {
        let prec = Precisions::DEFAULT;
        let d = QuantizedDistribution::new(&[1, 1, 1, 1], 2).unwrap();
        let low = substack(IidVCodec::new(d.clone(), 4), View::new(vec![0, 1, 2, 3]).unwrap())
            .unwrap();
        let high = substack(IidVCodec::new(d.clone(), 4), View::new(vec![4, 5, 6, 7]).unwrap())
            .unwrap();
        let xs_low = [0u64, 1, 2, 3];
        let xs_high = [3u64, 2, 1, 0];
        let mut ma = VMessage::init(8, prec).unwrap();
        let mut mb = ma.clone();
        low.push(&mut ma, &xs_low).unwrap();
        high.push(&mut ma, &xs_high).unwrap();
        high.push(&mut mb, &xs_high).unwrap();
        low.push(&mut mb, &xs_low).unwrap();
        // same data on disjoint lanes: decoded content must agree
        assert_eq!(low.pop(&mut ma).unwrap(), low.pop(&mut mb).unwrap());
        assert_eq!(high.pop(&mut ma).unwrap(), high.pop(&mut mb).unwrap());
    }

    #[test]
    fn substack_partition_roundtrip() {
        // latent view and observation view partition the head vector
        let prec = Precisions::DEFAULT;
        let dz = QuantizedDistribution::new(&[1, 3], 2).unwrap();
        let dx = QuantizedDistribution::new(&[5, 2, 1], 3).unwrap();
        let latent = substack(IidVCodec::new(dz, 2), View::new(vec![0, 1]).unwrap()).unwrap();
        let obs = substack(IidVCodec::new(dx, 6), View::new(vec![2, 3, 4, 5, 6, 7]).unwrap())
            .unwrap();
        let mut m = VMessage::init(8, prec).unwrap();
        let init = m.clone();
        let zs = [1u64, 0];
        let xs = [2u64, 0, 1, 0, 0, 2];
        latent.push(&mut m, &zs).unwrap();
        obs.push(&mut m, &xs).unwrap();
        assert_eq!(obs.pop(&mut m).unwrap(), xs);
        assert_eq!(latent.pop(&mut m).unwrap(), zs);
        assert_eq!(m, init);
    }

    #[test]
    fn view_composition_associative() {
        let a = View::new(vec![3, 1, 4, 0, 2]).unwrap();
        let b = View::new(vec![2, 0, 3]).unwrap();
        let c = View::new(vec![1, 2]).unwrap();
        let left = a.compose(&b).unwrap().compose(&c).unwrap();
        let right = a.compose(&b.compose(&c).unwrap()).unwrap();
        assert_eq!(left, right);
    }
}
