//! Vectorized rANS: K head lanes over one shared tail stack.
//!
//! Requires `r_s <= 2 * r_t`, which guarantees renormalization moves at most
//! one tail word per lane per operation, so the scalar while-loops reduce to
//! a single conditional. Lane/tail interleaving is in ascending lane index
//! during pop (descending during push); this order is part of the wire
//! format.

use crate::error::CoderError;
use crate::rans::{
    d_forward, d_inverse, flatten_head, head_word_count, Message, Precisions, QuantizedDistribution,
    SymbolModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlattenMode {
    Naive = 0,
    Benford = 1,
}

/// Uniform distribution over `[0, 2^bits)` with O(1) lookups and no table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformModel {
    bits: u32,
}

impl UniformModel {
    pub fn new(bits: u32) -> Self {
        UniformModel { bits }
    }
}

impl SymbolModel for UniformModel {
    fn precision(&self) -> u32 {
        self.bits
    }

    fn forward(&self, s_bar: u64) -> (u64, u64, u64) {
        (s_bar, s_bar, 1)
    }

    fn backward(&self, x: u64) -> (u64, u64) {
        (x, 1)
    }
}

/// Push `nbits` uniform bits of `value`, split into chunks narrow enough for
/// the message's precisions. Inverse of `pop_uniform_bits`.
pub fn push_uniform_bits(m: &mut Message, value: u64, nbits: u32) -> Result<(), CoderError> {
    let cmax = m.precisions().max_dist_precision();
    let mut remaining = nbits;
    let mut v = value;
    while remaining > 0 {
        let c = remaining.min(cmax);
        m.push(v & ((1u64 << c) - 1), &UniformModel::new(c))?;
        v >>= c;
        remaining -= c;
    }
    Ok(())
}

pub fn pop_uniform_bits(m: &mut Message, nbits: u32) -> Result<u64, CoderError> {
    let cmax = m.precisions().max_dist_precision();
    // reconstruct chunk widths in push order, then pop in reverse
    let mut sizes = Vec::new();
    let mut remaining = nbits;
    while remaining > 0 {
        let c = remaining.min(cmax);
        sizes.push(c);
        remaining -= c;
    }
    // chunks were pushed low-first, so they pop high-first
    let mut value: u64 = 0;
    let mut shift: u32 = nbits;
    for &c in sizes.iter().rev() {
        shift -= c;
        let chunk = m.pop(&UniformModel::new(c))?;
        value |= chunk << shift;
    }
    Ok(value)
}

/// Bijective coder for head values in `[2^(r_s - r_t), 2^r_s)`.
///
/// A head is coded as three uniform parts: its low r_t bits, the offset
/// within the octave of `head >> r_t`, and the octave index. Under the
/// 1/x head distribution the octaves carry equal mass, so only the
/// within-octave uniform approximation costs rate (well under a bit).
#[derive(Debug, Clone)]
pub struct HeadCode {
    prec: Precisions,
    octave_min: u32,
    octave_dist: QuantizedDistribution,
}

impl HeadCode {
    pub fn new(prec: Precisions) -> Result<Self, CoderError> {
        check_vector_precisions(&prec)?;
        let octave_min = prec.r_s - 2 * prec.r_t;
        let octave_count = prec.r_t; // octaves spanned by the valid head range
        let octave_dist = uniform_quantized(octave_count as usize, &prec)?;
        Ok(HeadCode {
            prec,
            octave_min,
            octave_dist,
        })
    }

    /// Fold a head value onto a scalar message.
    pub fn push_head(&self, m: &mut Message, head: u128) -> Result<(), CoderError> {
        debug_assert!(head >= self.prec.head_min() && head < self.prec.head_max());
        let low = (head & self.prec.tail_mask()) as u64;
        let v = head >> self.prec.r_t;
        let j = 127 - v.leading_zeros(); // floor(log2 v)
        let offset = (v - (1u128 << j)) as u64;
        push_uniform_bits(m, low, self.prec.r_t)?;
        push_uniform_bits(m, offset, j)?;
        m.push((j - self.octave_min) as u64, &self.octave_dist)?;
        Ok(())
    }

    /// Inverse of `push_head`.
    pub fn pop_head(&self, m: &mut Message) -> Result<u128, CoderError> {
        let j = m.pop(&self.octave_dist)? as u32 + self.octave_min;
        let offset = pop_uniform_bits(m, j)?;
        let low = pop_uniform_bits(m, self.prec.r_t)?;
        let v = (1u128 << j) + offset as u128;
        Ok((v << self.prec.r_t) | low as u128)
    }

    /// Rate of the octave part plus the low bits, in bits; the offset part
    /// adds `j` bits on top.
    pub fn fixed_cost_bits(&self) -> f64 {
        self.prec.r_t as f64 + (self.octave_dist.len() as f64).log2()
    }
}

/// Equal (up to rounding) weights over `n` symbols, at the widest precision
/// the message parameters allow (capped at 16 bits).
fn uniform_quantized(n: usize, prec: &Precisions) -> Result<QuantizedDistribution, CoderError> {
    if n.is_power_of_two() {
        let bits = n.trailing_zeros();
        if bits > 0 && bits <= prec.max_dist_precision() {
            let w = vec![1u64; n];
            return QuantizedDistribution::new(&w, bits);
        }
    }
    let r = prec.max_dist_precision().min(16);
    let total = 1u64 << r;
    let base = total / n as u64;
    if base == 0 {
        return Err(CoderError::InvalidPrecisions(format!(
            "cannot build a uniform distribution over {n} symbols at precision {r}"
        )));
    }
    let mut w = vec![base; n];
    w[0] += total - base * n as u64;
    QuantizedDistribution::new(&w, r)
}

fn check_vector_precisions(prec: &Precisions) -> Result<(), CoderError> {
    if prec.r_s > 2 * prec.r_t {
        return Err(CoderError::InvalidPrecisions(format!(
            "vectorized coding requires r_s <= 2 * r_t, got {}/{}",
            prec.r_s, prec.r_t
        )));
    }
    Ok(())
}

/// Vectorized coder state: K heads sharing one tail stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VMessage {
    heads: Vec<u128>,
    tail: Vec<u64>,
    prec: Precisions,
}

impl VMessage {
    /// All heads at the minimum permissible value, empty tail.
    pub fn init(k: usize, prec: Precisions) -> Result<Self, CoderError> {
        check_vector_precisions(&prec)?;
        if k == 0 {
            return Err(CoderError::InvalidPrecisions("lane count must be > 0".into()));
        }
        Ok(VMessage {
            heads: vec![prec.head_min(); k],
            tail: Vec::new(),
            prec,
        })
    }

    pub fn from_parts(
        heads: Vec<u128>,
        tail: Vec<u64>,
        prec: Precisions,
    ) -> Result<Self, CoderError> {
        check_vector_precisions(&prec)?;
        if heads.is_empty() {
            return Err(CoderError::Format("lane count must be > 0".into()));
        }
        if heads
            .iter()
            .any(|&h| h < prec.head_min() || h >= prec.head_max())
        {
            return Err(CoderError::Format("lane head out of range".into()));
        }
        Ok(VMessage { heads, tail, prec })
    }

    pub fn lanes(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[u128] {
        &self.heads
    }

    pub fn tail(&self) -> &[u64] {
        &self.tail
    }

    pub fn precisions(&self) -> &Precisions {
        &self.prec
    }

    pub fn effective_length(&self) -> f64 {
        let heads: f64 = self.heads.iter().map(|&h| (h as f64).log2()).sum();
        heads + (self.prec.r_t as u64 * self.tail.len() as u64) as f64
    }

    /// Effective length including the `(K - 1) * log2(r_t * ln 2)` cost of
    /// folding the extra lanes at flatten time. This is the quantity
    /// conserved (to within a bit per lane) by `grow` and `shrink`.
    pub fn effective_length_opt(&self) -> f64 {
        let fold = (self.lanes() as f64 - 1.0) * (self.prec.r_t as f64 * 2f64.ln()).log2();
        self.effective_length() + fold
    }

    /// Push one symbol per selected lane. `dists` has one entry per lane or
    /// a single broadcast entry. Exact inverse of `vpop_lanes`.
    pub fn vpush_lanes<D: SymbolModel>(
        &mut self,
        lanes: &[usize],
        xs: &[u64],
        dists: &[D],
    ) -> Result<(), CoderError> {
        if xs.len() != lanes.len() {
            return Err(CoderError::Format("symbol count != lane count".into()));
        }
        if dists.len() != lanes.len() && dists.len() != 1 {
            return Err(CoderError::Format("distribution count mismatch".into()));
        }
        let r_t = self.prec.r_t;
        let tail_mask = self.prec.tail_mask();
        // tail words must come off in descending lane order so the pop
        // (ascending) consumes them correctly
        for idx in (0..lanes.len()).rev() {
            let lane = lanes[idx];
            let dist = &dists[if dists.len() == 1 { 0 } else { idx }];
            let r = dist.precision();
            debug_assert!(r > 0 && r <= self.prec.max_dist_precision());
            let (c, p) = dist.backward(xs[idx]);
            let mut s = self.heads[lane];
            let limit = (p as u128) << (self.prec.r_s - r);
            if s >= limit {
                self.tail.push((s & tail_mask) as u64);
                s >>= r_t;
            }
            self.heads[lane] = d_inverse(s, p, c, r);
        }
        Ok(())
    }

    /// Pop one symbol per selected lane, in ascending lane order.
    pub fn vpop_lanes<D: SymbolModel>(
        &mut self,
        lanes: &[usize],
        dists: &[D],
    ) -> Result<Vec<u64>, CoderError> {
        if dists.len() != lanes.len() && dists.len() != 1 {
            return Err(CoderError::Format("distribution count mismatch".into()));
        }
        let head_min = self.prec.head_min();
        let r_t = self.prec.r_t;
        let mut xs = Vec::with_capacity(lanes.len());
        for (idx, &lane) in lanes.iter().enumerate() {
            let dist = &dists[if dists.len() == 1 { 0 } else { idx }];
            let (mut s, x) = d_forward(self.heads[lane], dist);
            if s < head_min {
                let t_top = self.tail.pop().ok_or_else(CoderError::underflow)?;
                s = (s << r_t) + t_top as u128;
            }
            self.heads[lane] = s;
            xs.push(x);
        }
        Ok(xs)
    }

    /// Push one symbol per lane.
    pub fn vpush<D: SymbolModel>(&mut self, xs: &[u64], dists: &[D]) -> Result<(), CoderError> {
        let lanes: Vec<usize> = (0..self.lanes()).collect();
        self.vpush_lanes(&lanes, xs, dists)
    }

    /// Pop one symbol per lane.
    pub fn vpop<D: SymbolModel>(&mut self, dists: &[D]) -> Result<Vec<u64>, CoderError> {
        let lanes: Vec<usize> = (0..self.lanes()).collect();
        self.vpop_lanes(&lanes, dists)
    }

    /// Concatenate all lane heads and the tail; length is exactly
    /// `K * r_s + r_t * |tail|` bits when r_t divides r_s.
    pub fn flatten_naive(&self) -> Vec<u64> {
        let mut words = Vec::new();
        for &h in &self.heads {
            words.extend(flatten_head(h, &self.prec));
        }
        words.extend(self.tail.iter().rev());
        words
    }

    pub fn unflatten_naive(
        words: &[u64],
        k: usize,
        prec: Precisions,
    ) -> Result<Self, CoderError> {
        let per_head = head_word_count(&prec);
        let need = per_head * k;
        if words.len() < need {
            return Err(CoderError::Format(format!(
                "need {need} head words, got {}",
                words.len()
            )));
        }
        let mut heads = Vec::with_capacity(k);
        for lane in 0..k {
            let mut h: u128 = 0;
            for &w in &words[lane * per_head..(lane + 1) * per_head] {
                h = (h << prec.r_t) | w as u128;
            }
            heads.push(h);
        }
        let tail: Vec<u64> = words[need..].iter().rev().copied().collect();
        VMessage::from_parts(heads, tail, prec)
    }

    /// Near-optimal flattening: treat lane 0 plus the tail as a scalar
    /// message and fold the remaining heads onto it with `HeadCode`.
    pub fn flatten_benford(&self) -> Vec<u64> {
        let code = HeadCode::new(self.prec).expect("precisions already validated");
        let mut m = Message::from_parts(self.heads[0], self.tail.clone(), self.prec)
            .expect("lane head is a valid scalar head");
        for &h in &self.heads[1..] {
            code.push_head(&mut m, h).expect("head folding cannot fail");
        }
        m.flatten()
    }

    pub fn unflatten_benford(
        words: &[u64],
        k: usize,
        prec: Precisions,
    ) -> Result<Self, CoderError> {
        check_vector_precisions(&prec)?;
        if k == 0 {
            return Err(CoderError::Format("lane count must be > 0".into()));
        }
        let code = HeadCode::new(prec)?;
        let mut m = Message::unflatten(words, prec)?;
        let mut heads = vec![0u128; k];
        for lane in (1..k).rev() {
            heads[lane] = code.pop_head(&mut m)?;
        }
        heads[0] = m.head();
        VMessage::from_parts(heads, m.tail().to_vec(), prec)
    }

    /// Add lanes by sampling new head values from the message itself.
    /// Inverse of `shrink`.
    pub fn grow(&mut self, k_new: usize) -> Result<(), CoderError> {
        if k_new < self.lanes() {
            return Err(CoderError::Format("grow target below current lane count".into()));
        }
        let code = HeadCode::new(self.prec)?;
        let mut m = Message::from_parts(self.heads[0], std::mem::take(&mut self.tail), self.prec)?;
        for _ in self.lanes()..k_new {
            let h = code.pop_head(&mut m)?;
            self.heads.push(h);
        }
        self.heads[0] = m.head();
        self.tail = m.into_tail();
        Ok(())
    }

    /// Drop lanes by folding surplus heads back into the message.
    /// Inverse of `grow`.
    pub fn shrink(&mut self, k_new: usize) -> Result<(), CoderError> {
        if k_new == 0 {
            return Err(CoderError::Format("lane count must be > 0".into()));
        }
        if k_new > self.lanes() {
            return Err(CoderError::Format("shrink target above current lane count".into()));
        }
        let code = HeadCode::new(self.prec)?;
        let mut m = Message::from_parts(self.heads[0], std::mem::take(&mut self.tail), self.prec)?;
        while self.heads.len() > k_new {
            let h = self.heads.pop().unwrap();
            code.push_head(&mut m, h)?;
        }
        self.heads[0] = m.head();
        self.tail = m.into_tail();
        Ok(())
    }

    /// Single-lane vector message wrapping a scalar one, so scalar
    /// messages can reuse the vector containers.
    pub fn from_scalar(m: Message) -> Self {
        let prec = *m.precisions();
        let head = m.head();
        VMessage::from_parts(vec![head], m.into_tail(), prec)
            .expect("a valid scalar message is a valid single-lane message")
    }

    /// Lane-0 view as a scalar message, sharing the tail. Only valid for
    /// K = 1 comparisons.
    pub fn to_scalar(&self) -> Option<Message> {
        if self.lanes() != 1 {
            return None;
        }
        Message::from_parts(self.heads[0], self.tail.clone(), self.prec).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn prec16() -> Precisions {
        Precisions::new(16, 8, 3).unwrap()
    }

    fn fig23() -> QuantizedDistribution {
        QuantizedDistribution::new(&[1, 2, 3, 2], 3).unwrap()
    }

    #[test]
    fn vinit_values() {
        let m = VMessage::init(4, Precisions::DEFAULT).unwrap();
        assert_eq!(m.heads(), &[1u128 << 32; 4]);
        assert!(m.tail().is_empty());
        // naive flatten of vinit(3) at 64/32: 6 words
        let m = VMessage::init(3, Precisions::DEFAULT).unwrap();
        assert_eq!(m.flatten_naive().len(), 6);
    }

    #[test]
    fn rejects_wide_head() {
        // r_s > 2 r_t
        let prec = Precisions::new(32, 8, 3).unwrap();
        assert!(VMessage::init(2, prec).is_err());
    }

    #[test]
    fn k1_matches_scalar() {
        let prec = prec16();
        let d = fig23();
        let mut vm = VMessage::init(1, prec).unwrap();
        let mut sm = Message::init(prec);
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..500 {
            let x = rng.gen_range(0..4u64);
            vm.vpush(&[x], &[d.clone()]).unwrap();
            sm.push(x, &d).unwrap();
            assert_eq!(vm.heads()[0], sm.head());
            assert_eq!(vm.tail(), sm.tail());
        }
        for _ in 0..500 {
            let xv = vm.vpop(&[d.clone()]).unwrap()[0];
            let xs = sm.pop(&d).unwrap();
            assert_eq!(xv, xs);
            assert_eq!(vm.heads()[0], sm.head());
        }
    }

    #[test]
    fn equal_lanes_stay_equal() {
        let prec = prec16();
        let d = fig23();
        let mut vm = VMessage::init(2, prec).unwrap();
        for _ in 0..64 {
            vm.vpush(&[2, 2], &[d.clone()]).unwrap();
            assert_eq!(vm.heads()[0], vm.heads()[1]);
        }
    }

    #[test]
    fn vpush_vpop_roundtrip_random() {
        let prec = Precisions::DEFAULT;
        let mut rng = StdRng::seed_from_u64(99);
        for &k in &[2usize, 8, 64] {
            let d = QuantizedDistribution::new(&[30000, 20000, 10000, 5536], 16).unwrap();
            let mut vm = VMessage::init(k, prec).unwrap();
            let mut pushed = Vec::new();
            for _ in 0..200 {
                let xs: Vec<u64> = (0..k).map(|_| rng.gen_range(0..4)).collect();
                vm.vpush(&xs, &[d.clone()]).unwrap();
                pushed.push(xs);
            }
            for xs in pushed.iter().rev() {
                let got = vm.vpop(&[d.clone()]).unwrap();
                assert_eq!(&got, xs);
            }
            assert_eq!(vm, VMessage::init(k, prec).unwrap());
        }
    }

    #[test]
    fn flatten_naive_roundtrip() {
        let prec = Precisions::DEFAULT;
        let d = QuantizedDistribution::new(&[1, 1, 2, 4, 8, 16, 32, 65472], 16).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let mut vm = VMessage::init(5, prec).unwrap();
        for _ in 0..97 {
            let xs: Vec<u64> = (0..5).map(|_| rng.gen_range(0..8)).collect();
            vm.vpush(&xs, &[d.clone()]).unwrap();
        }
        let words = vm.flatten_naive();
        let back = VMessage::unflatten_naive(&words, 5, prec).unwrap();
        assert_eq!(back, vm);
    }

    #[test]
    fn flatten_benford_roundtrip_and_saving() {
        let prec = Precisions::DEFAULT;
        let d = QuantizedDistribution::new(&[20000, 30000, 15000, 536], 16).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        for &k in &[1usize, 2, 17, 256] {
            let mut vm = VMessage::init(k, prec).unwrap();
            for _ in 0..50 {
                let xs: Vec<u64> = (0..k).map(|_| rng.gen_range(0..4)).collect();
                vm.vpush(&xs, &[d.clone()]).unwrap();
            }
            let benford = vm.flatten_benford();
            let naive = vm.flatten_naive();
            let back = VMessage::unflatten_benford(&benford, k, prec).unwrap();
            assert_eq!(back, vm);
            if k == 1 {
                assert_eq!(benford, vm.to_scalar().unwrap().flatten());
            } else {
                assert!(
                    benford.len() < naive.len(),
                    "benford {} vs naive {} at K={k}",
                    benford.len(),
                    naive.len()
                );
            }
        }
    }

    #[test]
    fn grow_shrink_roundtrip() {
        let prec = Precisions::DEFAULT;
        let d = QuantizedDistribution::new(&[1u64 << 15, 1 << 15], 16).unwrap();
        let mut vm = VMessage::init(1, prec).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..10_000 {
            vm.vpush(&[rng.gen_range(0..2u64)], &[d.clone()]).unwrap();
        }
        let before = vm.clone();
        let l_before = vm.effective_length_opt();
        vm.grow(8).unwrap();
        let l_after = vm.effective_length_opt();
        assert!(
            (l_after - l_before).abs() <= 8.0,
            "grow changed l*_opt by {}",
            l_after - l_before
        );
        vm.shrink(1).unwrap();
        assert_eq!(vm, before);

        // identity cases
        let snapshot = vm.clone();
        vm.grow(1).unwrap();
        assert_eq!(vm, snapshot);
        vm.shrink(1).unwrap();
        assert_eq!(vm, snapshot);
    }

    #[test]
    fn shrink_of_vinit_is_compact() {
        let prec = Precisions::DEFAULT;
        let mut vm = VMessage::init(4, prec).unwrap();
        vm.shrink(1).unwrap();
        assert_eq!(vm.lanes(), 1);
        let bits = vm.to_scalar().unwrap().length_bits();
        assert!(bits <= 4 * prec.r_s as u64, "flatten length {bits} bits");
    }

    #[test]
    fn uniform_bits_roundtrip() {
        let prec = Precisions::DEFAULT;
        let mut m = Message::init(prec);
        push_uniform_bits(&mut m, 0xDEADBEEF, 32).unwrap();
        push_uniform_bits(&mut m, 0x5, 3).unwrap();
        assert_eq!(pop_uniform_bits(&mut m, 3).unwrap(), 0x5);
        assert_eq!(pop_uniform_bits(&mut m, 32).unwrap(), 0xDEADBEEF);
        assert_eq!(m, Message::init(prec));
    }

    #[test]
    fn head_code_roundtrip() {
        let prec = Precisions::DEFAULT;
        let code = HeadCode::new(prec).unwrap();
        let mut rng = StdRng::seed_from_u64(21);
        let mut m = Message::init(prec);
        // seed the message so pops have data to draw on
        push_uniform_bits(&mut m, rng.gen(), 31).unwrap();
        push_uniform_bits(&mut m, rng.gen(), 31).unwrap();
        let mut heads = Vec::new();
        for _ in 0..200 {
            let h = rng.gen_range(prec.head_min()..prec.head_max());
            code.push_head(&mut m, h).unwrap();
            heads.push(h);
        }
        for &h in heads.iter().rev() {
            assert_eq!(code.pop_head(&mut m).unwrap(), h);
        }
    }
}
