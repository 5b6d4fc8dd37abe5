//! Scalar rANS coder.
//!
//! The coder state is a `Message`: a wide unsigned head plus a LIFO stack of
//! fixed-width tail words. Symbols are pushed and popped against quantized
//! distributions whose integer weights sum to `2^r`. All arithmetic is exact;
//! the head is held in a `u128` so that intermediates for head widths up to 64
//! bits never overflow.

use crate::error::CoderError;

/// The three precision parameters of the coder.
///
/// `r_s` is the head width in bits, `r_t` the tail-word width, and `r` the
/// distribution precision. `r < r_s - r_t` keeps the per-op overhead
/// `epsilon` finite and guarantees `renorm_inverse` lands in the valid
/// interval exactly once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Precisions {
    pub r_s: u32,
    pub r_t: u32,
    pub r: u32,
}

impl Precisions {
    pub const DEFAULT: Precisions = Precisions {
        r_s: 64,
        r_t: 32,
        r: 16,
    };

    pub fn new(r_s: u32, r_t: u32, r: u32) -> Result<Self, CoderError> {
        if r_s == 0 || r_s > 64 {
            return Err(CoderError::InvalidPrecisions(format!(
                "head width r_s={r_s} out of range (1..=64)"
            )));
        }
        if r_t == 0 || r_t >= r_s {
            return Err(CoderError::InvalidPrecisions(format!(
                "tail width r_t={r_t} must satisfy 0 < r_t < r_s={r_s}"
            )));
        }
        if r == 0 || r >= r_s - r_t {
            return Err(CoderError::InvalidPrecisions(format!(
                "distribution precision r={r} must satisfy 0 < r < r_s - r_t = {}",
                r_s - r_t
            )));
        }
        Ok(Precisions { r_s, r_t, r })
    }

    /// Per-operation overhead bound: `log2(1 / (1 - 2^-(r_s - r_t - r)))`.
    pub fn epsilon(&self) -> f64 {
        let gap = self.r_s - self.r_t - self.r;
        -(1.0 - (0.5f64).powi(gap as i32)).log2()
    }

    /// Epsilon for a push at a distribution precision other than `self.r`.
    pub fn epsilon_at(&self, r: u32) -> f64 {
        let gap = self.r_s - self.r_t - r;
        -(1.0 - (0.5f64).powi(gap as i32)).log2()
    }

    /// Minimum permissible head value, `2^(r_s - r_t)`.
    pub fn head_min(&self) -> u128 {
        1u128 << (self.r_s - self.r_t)
    }

    /// Exclusive head upper bound, `2^r_s`.
    pub fn head_max(&self) -> u128 {
        1u128 << self.r_s
    }

    pub fn tail_mask(&self) -> u128 {
        (1u128 << self.r_t) - 1
    }

    /// Largest distribution precision usable at these head/tail widths.
    pub fn max_dist_precision(&self) -> u32 {
        self.r_s - self.r_t - 1
    }
}

/// A distribution usable for coding: integer weights at precision `r` with
/// forward (slot -> symbol) and backward (symbol -> interval) lookups.
///
/// `forward(s_bar)` must return the unique `(x, c, p)` with
/// `c <= s_bar < c + p`; `backward(x)` returns that `(c, p)`.
pub trait SymbolModel {
    fn precision(&self) -> u32;
    fn forward(&self, s_bar: u64) -> (u64, u64, u64);
    fn backward(&self, x: u64) -> (u64, u64);
}

/// Categorical distribution with an explicit cumulative table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedDistribution {
    r: u32,
    weights: Vec<u64>,
    cumulative: Vec<u64>,
}

impl QuantizedDistribution {
    /// Builds a distribution from positive integer weights summing to `2^r`.
    pub fn new(weights: &[u64], r: u32) -> Result<Self, CoderError> {
        if r > 62 {
            return Err(CoderError::InvalidDistribution(format!(
                "precision r={r} too large"
            )));
        }
        if weights.is_empty() {
            return Err(CoderError::InvalidDistribution(
                "empty weight list".into(),
            ));
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut total: u64 = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0 {
                return Err(CoderError::InvalidDistribution(format!(
                    "zero weight at symbol {i}"
                )));
            }
            cumulative.push(total);
            total = total.checked_add(w).ok_or_else(|| {
                CoderError::InvalidDistribution("weight sum overflow".into())
            })?;
        }
        if total != 1u64 << r {
            return Err(CoderError::InvalidDistribution(format!(
                "weights sum to {total}, expected 2^{r} = {}",
                1u64 << r
            )));
        }
        Ok(QuantizedDistribution {
            r,
            weights: weights.to_vec(),
            cumulative,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, i: usize) -> u64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    /// Quantization precision `r`: weights sum to `2^r`.
    pub fn precision(&self) -> u32 {
        self.r
    }

    /// Information content of symbol `i`: `r - log2(p_i)` bits.
    pub fn info_content(&self, i: usize) -> f64 {
        self.r as f64 - (self.weights[i] as f64).log2()
    }

    /// Entropy in bits per symbol.
    pub fn entropy(&self) -> f64 {
        let total = (1u64 << self.r) as f64;
        self.weights
            .iter()
            .map(|&w| {
                let p = w as f64 / total;
                -p * p.log2()
            })
            .sum()
    }
}

impl SymbolModel for QuantizedDistribution {
    fn precision(&self) -> u32 {
        self.r
    }

    fn forward(&self, s_bar: u64) -> (u64, u64, u64) {
        debug_assert!(s_bar < 1u64 << self.r);
        // index of the last cumulative entry <= s_bar
        let i = self.cumulative.partition_point(|&c| c <= s_bar) - 1;
        (i as u64, self.cumulative[i], self.weights[i])
    }

    fn backward(&self, x: u64) -> (u64, u64) {
        let i = x as usize;
        (self.cumulative[i], self.weights[i])
    }
}

/// Extract a symbol from the head: returns `(s', x)` where
/// `s' = p * (s div 2^r) + (s mod 2^r) - c`.
pub fn d_forward<D: SymbolModel>(s: u128, dist: &D) -> (u128, u64) {
    let r = dist.precision();
    let s_bar = (s & ((1u128 << r) - 1)) as u64;
    let (x, c, p) = dist.forward(s_bar);
    let s_prime = p as u128 * (s >> r) + s_bar as u128 - c as u128;
    (s_prime, x)
}

/// Inverse of `d_forward` holding the symbol fixed:
/// `2^r * (s' div p) + s' mod p + c`.
pub fn d_inverse(s_prime: u128, p: u64, c: u64, r: u32) -> u128 {
    ((s_prime / p as u128) << r) + s_prime % p as u128 + c as u128
}

/// Refill the head from the tail until it is back in
/// `[2^(r_s - r_t), 2^r_s)`. Errors with `Underflow` if the tail runs out.
pub fn renorm(
    mut s: u128,
    tail: &mut Vec<u64>,
    prec: &Precisions,
) -> Result<u128, CoderError> {
    let head_min = prec.head_min();
    while s < head_min {
        let t_top = tail.pop().ok_or_else(CoderError::underflow)?;
        s = (s << prec.r_t) + t_top as u128;
    }
    Ok(s)
}

/// Spill low-order head bits to the tail until
/// `s < p * 2^(r_s - r)`, guaranteeing the subsequent `d_inverse` lands in
/// the valid head range.
pub fn renorm_inverse(
    mut s: u128,
    tail: &mut Vec<u64>,
    p: u64,
    prec: &Precisions,
    r: u32,
) -> u128 {
    let limit = (p as u128) << (prec.r_s - r);
    while s >= limit {
        tail.push((s & prec.tail_mask()) as u64);
        s >>= prec.r_t;
    }
    s
}

/// rANS coder state: head plus tail-word stack (top = end of the vec).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    head: u128,
    tail: Vec<u64>,
    prec: Precisions,
}

impl Message {
    /// Shortest possible message: head at its minimum, empty tail.
    pub fn init(prec: Precisions) -> Self {
        Message {
            head: prec.head_min(),
            tail: Vec::new(),
            prec,
        }
    }

    pub fn from_parts(
        head: u128,
        tail: Vec<u64>,
        prec: Precisions,
    ) -> Result<Self, CoderError> {
        if head < prec.head_min() || head >= prec.head_max() {
            return Err(CoderError::Format(format!(
                "head {head} outside [2^{}, 2^{})",
                prec.r_s - prec.r_t,
                prec.r_s
            )));
        }
        if tail.iter().any(|&w| w as u128 > prec.tail_mask()) {
            return Err(CoderError::Format("tail word wider than r_t".into()));
        }
        Ok(Message { head, tail, prec })
    }

    pub fn head(&self) -> u128 {
        self.head
    }

    pub fn tail(&self) -> &[u64] {
        &self.tail
    }

    pub fn precisions(&self) -> &Precisions {
        &self.prec
    }

    pub fn into_tail(self) -> Vec<u64> {
        self.tail
    }

    fn check_dist_precision(&self, r: u32) -> Result<(), CoderError> {
        if r == 0 || r > self.prec.max_dist_precision() {
            return Err(CoderError::InvalidPrecisions(format!(
                "distribution precision {r} unusable at r_s={} r_t={}",
                self.prec.r_s, self.prec.r_t
            )));
        }
        Ok(())
    }

    /// Encode one symbol. Exact inverse of `pop`.
    pub fn push<D: SymbolModel>(&mut self, x: u64, dist: &D) -> Result<(), CoderError> {
        let r = dist.precision();
        self.check_dist_precision(r)?;
        let (c, p) = dist.backward(x);
        let s_prime = renorm_inverse(self.head, &mut self.tail, p, &self.prec, r);
        self.head = d_inverse(s_prime, p, c, r);
        debug_assert!(self.head >= self.prec.head_min() && self.head < self.prec.head_max());
        Ok(())
    }

    /// Decode one symbol. Exact inverse of `push`.
    pub fn pop<D: SymbolModel>(&mut self, dist: &D) -> Result<u64, CoderError> {
        let r = dist.precision();
        self.check_dist_precision(r)?;
        let (s_prime, x) = d_forward(self.head, dist);
        self.head = renorm(s_prime, &mut self.tail, &self.prec)?;
        Ok(x)
    }

    /// `l*(m) = log2(head) + r_t * |tail|`.
    pub fn effective_length(&self) -> f64 {
        (self.head as f64).log2() + (self.prec.r_t as u64 * self.tail.len() as u64) as f64
    }

    /// `l(m) = r_s + r_t * |tail|`: the flattened length in bits.
    pub fn length_bits(&self) -> u64 {
        self.prec.r_s as u64 + self.prec.r_t as u64 * self.tail.len() as u64
    }

    /// Flatten to a sequence of r_t-wide words: head words first
    /// (most significant first), then tail words top-first.
    pub fn flatten(&self) -> Vec<u64> {
        let mut words = flatten_head(self.head, &self.prec);
        words.extend(self.tail.iter().rev());
        words
    }

    /// Inverse of `flatten`.
    pub fn unflatten(words: &[u64], prec: Precisions) -> Result<Self, CoderError> {
        let n_head = head_word_count(&prec);
        if words.len() < n_head {
            return Err(CoderError::Format(format!(
                "need at least {n_head} words for the head, got {}",
                words.len()
            )));
        }
        let mut head: u128 = 0;
        for &w in &words[..n_head] {
            if w as u128 > prec.tail_mask() {
                return Err(CoderError::Format("word wider than r_t".into()));
            }
            head = (head << prec.r_t) | w as u128;
        }
        let tail: Vec<u64> = words[n_head..].iter().rev().copied().collect();
        Message::from_parts(head, tail, prec)
    }
}

/// Number of r_t-wide words needed to hold the head.
pub fn head_word_count(prec: &Precisions) -> usize {
    ((prec.r_s + prec.r_t - 1) / prec.r_t) as usize
}

pub(crate) fn flatten_head(head: u128, prec: &Precisions) -> Vec<u64> {
    let n = head_word_count(prec);
    (0..n)
        .map(|i| ((head >> (prec.r_t as usize * (n - 1 - i))) & prec.tail_mask()) as u64)
        .collect()
}
