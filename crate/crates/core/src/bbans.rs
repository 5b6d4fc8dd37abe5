//! Bits-back coding protocols on top of the scalar coder: single-layer
//! push/pop, hierarchical dynamic-discretization, the interleaved
//! (Bit-Swap) ordering for Markov chains, batch chaining, and chain
//! initialization strategies.

use crate::codecs::{quantize_probs, CategoricalCodec, Codec, DiscretizedObsCodec, GaussianIndexCodec, CdfKernel};
use crate::container::{read_bbc2, write_bbc2};
use crate::discretize::DiscretizationGrid;
use crate::error::CoderError;
use crate::latent_models::{
    HierarchicalGaussianModel, LinearGaussianVAE, MarkovChainModel, MixtureModel, Model,
    PIXEL_HI, PIXEL_LO,
};
use crate::rans::{Message, Precisions};
use crate::vrans::{pop_uniform_bits, push_uniform_bits, FlattenMode, VMessage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// How the chain acquires the bits its first posterior pops consume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChainInit {
    /// Seeded i.i.d. uniform bits pushed before any data.
    RandomBits { bits: u64, seed: u64 },
    /// Code early data with a model-free fallback codec until the message
    /// holds at least `threshold_bits`, then switch to bits-back.
    FallbackWarmup { threshold_bits: f64 },
}

/// Measured costs of one datum push: `pushed - popped` is the net rate.
#[derive(Debug, Clone, Copy)]
pub struct PushStats {
    pub popped_bits: f64,
    pub pushed_bits: f64,
}

impl PushStats {
    pub fn net_bits(&self) -> f64 {
        self.pushed_bits - self.popped_bits
    }
}

/// A bits-back codec for one datum of a fixed model family.
pub trait BbDatumCodec {
    fn push(&self, m: &mut Message, x: &[u16]) -> Result<PushStats, CoderError>;
    fn pop(&self, m: &mut Message) -> Result<Vec<u16>, CoderError>;
    /// Symbols per datum.
    fn dims(&self) -> usize;
    /// Exclusive upper bound on symbol values.
    fn symbol_card(&self) -> u16;
}

/// Table 3.2 encode step: pop the latent from the posterior, push the
/// datum with the likelihood, push the latent with the prior.
pub fn bbans_push(
    m: &mut Message,
    x: &[u16],
    codec: &dyn BbDatumCodec,
) -> Result<PushStats, CoderError> {
    codec.push(m, x)
}

/// Exact inverse of [`bbans_push`]: pop prior, pop likelihood, push the
/// recovered latent back with the posterior.
pub fn bbans_pop(m: &mut Message, codec: &dyn BbDatumCodec) -> Result<Vec<u16>, CoderError> {
    codec.pop(m)
}

fn cat_codec(probs: &[f64], r: u32) -> Result<CategoricalCodec, CoderError> {
    CategoricalCodec::new(&quantize_probs(probs, r)?, r)
}

fn map_underflow(e: CoderError, have: f64) -> CoderError {
    match e {
        CoderError::Underflow { .. } => CoderError::InsufficientInitBits {
            needed: have.ceil() as u64 + 64,
            have: have as u64,
        },
        other => other,
    }
}

/// Latent-free datum codec: one categorical symbol per datum, coded
/// directly. The degenerate case of the chain (nothing pops).
pub struct CategoricalDatumCodec {
    dist: crate::rans::QuantizedDistribution,
}

impl CategoricalDatumCodec {
    pub fn new(dist: crate::rans::QuantizedDistribution) -> Self {
        CategoricalDatumCodec { dist }
    }
}

impl BbDatumCodec for CategoricalDatumCodec {
    fn push(&self, m: &mut Message, x: &[u16]) -> Result<PushStats, CoderError> {
        let before = m.effective_length();
        m.push(x[0] as u64, &self.dist)?;
        Ok(PushStats {
            popped_bits: 0.0,
            pushed_bits: m.effective_length() - before,
        })
    }

    fn pop(&self, m: &mut Message) -> Result<Vec<u16>, CoderError> {
        Ok(vec![m.pop(&self.dist)? as u16])
    }

    fn dims(&self) -> usize {
        1
    }

    fn symbol_card(&self) -> u16 {
        self.dist.len() as u16
    }
}

/// Plain bits-back for a vector of independent mixtures: all posterior
/// latents pop before any likelihood or prior push, so the initial-bits
/// requirement grows with the number of latent dimensions.
pub struct MixtureBbCodec {
    parts: Vec<MixtureModel>,
    r: u32,
}

impl MixtureBbCodec {
    pub fn new(parts: Vec<MixtureModel>, r: u32) -> Self {
        assert!(!parts.is_empty());
        MixtureBbCodec { parts, r }
    }

    fn slices<'a>(&self, x: &'a [u16]) -> Vec<&'a [u16]> {
        let mut out = Vec::with_capacity(self.parts.len());
        let mut offset = 0;
        for part in &self.parts {
            out.push(&x[offset..offset + part.obs_dims()]);
            offset += part.obs_dims();
        }
        out
    }

    fn pixel_codec(&self, part: usize, z: usize, pixel: usize) -> Result<CategoricalCodec, CoderError> {
        let p = self.parts[part].bernoulli(z)[pixel];
        cat_codec(&[1.0 - p, p], self.r)
    }
}

impl BbDatumCodec for MixtureBbCodec {
    fn push(&self, m: &mut Message, x: &[u16]) -> Result<PushStats, CoderError> {
        let xs = self.slices(x);
        let before = m.effective_length();
        // phase 1: pop every latent from its exact posterior
        let mut zs = vec![0usize; self.parts.len()];
        for j in (0..self.parts.len()).rev() {
            let q = cat_codec(&self.parts[j].posterior(xs[j]), self.r)?;
            zs[j] = q.pop(m).map_err(|e| map_underflow(e, before))? as usize;
        }
        let after_pop = m.effective_length();
        // phase 2: push observations under the likelihood
        for j in 0..self.parts.len() {
            for pixel in (0..xs[j].len()).rev() {
                self.pixel_codec(j, zs[j], pixel)?
                    .push(m, &(xs[j][pixel] as u64))?;
            }
        }
        // phase 3: push latents under the prior
        for j in 0..self.parts.len() {
            cat_codec(self.parts[j].weights(), self.r)?.push(m, &(zs[j] as u64))?;
        }
        Ok(PushStats {
            popped_bits: before - after_pop,
            pushed_bits: m.effective_length() - after_pop,
        })
    }

    fn pop(&self, m: &mut Message) -> Result<Vec<u16>, CoderError> {
        let n = self.parts.len();
        let mut zs = vec![0usize; n];
        for j in (0..n).rev() {
            zs[j] = cat_codec(self.parts[j].weights(), self.r)?.pop(m)? as usize;
        }
        let mut xs: Vec<Vec<u16>> = vec![Vec::new(); n];
        for j in (0..n).rev() {
            let d = self.parts[j].obs_dims();
            let mut part_x = vec![0u16; d];
            for (pixel, slot) in part_x.iter_mut().enumerate() {
                *slot = self.pixel_codec(j, zs[j], pixel)?.pop(m)? as u16;
            }
            xs[j] = part_x;
        }
        // restore the posterior pops
        for (j, x_j) in xs.iter().enumerate() {
            let q = cat_codec(&self.parts[j].posterior(x_j), self.r)?;
            q.push(m, &(zs[j] as u64))?;
        }
        Ok(xs.concat())
    }

    fn dims(&self) -> usize {
        self.parts.iter().map(|p| p.obs_dims()).sum()
    }

    fn symbol_card(&self) -> u16 {
        2
    }
}

/// Single-layer Gaussian bits-back: posterior pops bucket indices on the
/// standard-normal equal-mass grid, the likelihood pushes pixels, and the
/// prior over indices is exactly uniform.
pub struct LinGaussBbCodec {
    model: LinearGaussianVAE,
    r_q: u32,
    r: u32,
}

impl LinGaussBbCodec {
    pub fn new(model: LinearGaussianVAE, r_q: u32, r: u32) -> Self {
        LinGaussBbCodec { model, r_q, r }
    }

    fn grid(&self) -> DiscretizationGrid {
        DiscretizationGrid::new(0.0, 1.0, self.r_q).expect("static grid")
    }

    fn pixel_codec(&self, mean: f64) -> Result<DiscretizedObsCodec, CoderError> {
        DiscretizedObsCodec::new(mean, self.model.sigma(), PIXEL_LO, PIXEL_HI, self.r, CdfKernel::Gaussian)
    }
}

impl BbDatumCodec for LinGaussBbCodec {
    fn push(&self, m: &mut Message, x: &[u16]) -> Result<PushStats, CoderError> {
        let k = self.model.latent_dim();
        let grid = self.grid();
        let (mu, sd) = self.model.posterior(x);
        let before = m.effective_length();
        let mut idx = vec![0u64; k];
        for j in (0..k).rev() {
            let q = GaussianIndexCodec::new(mu[j], sd[j], grid, self.r)?;
            idx[j] = q.pop(m).map_err(|e| map_underflow(e, before))?;
        }
        let after_pop = m.effective_length();
        let z: Vec<f64> = idx.iter().map(|&i| grid.centre(i)).collect();
        let mean = self.model.mean(&z);
        for pixel in (0..x.len()).rev() {
            self.pixel_codec(mean[pixel])?.push(m, &(x[pixel] as i64))?;
        }
        for j in (0..k).rev() {
            push_uniform_bits(m, idx[j], self.r_q)?;
        }
        Ok(PushStats {
            popped_bits: before - after_pop,
            pushed_bits: m.effective_length() - after_pop,
        })
    }

    fn pop(&self, m: &mut Message) -> Result<Vec<u16>, CoderError> {
        let k = self.model.latent_dim();
        let grid = self.grid();
        let mut idx = vec![0u64; k];
        for slot in idx.iter_mut() {
            *slot = pop_uniform_bits(m, self.r_q)?;
        }
        let z: Vec<f64> = idx.iter().map(|&i| grid.centre(i)).collect();
        let mean = self.model.mean(&z);
        let mut x = vec![0u16; self.model.obs_dims()];
        for pixel in 0..x.len() {
            x[pixel] = self.pixel_codec(mean[pixel])?.pop(m)? as u16;
        }
        let (mu, sd) = self.model.posterior(&x);
        for j in 0..k {
            let q = GaussianIndexCodec::new(mu[j], sd[j], grid, self.r)?;
            q.push(m, &idx[j])?;
        }
        Ok(x)
    }

    fn dims(&self) -> usize {
        self.model.obs_dims()
    }

    fn symbol_card(&self) -> u16 {
        256
    }
}

/// Plain bits-back on a Markov chain: the exact top-down posterior pops
/// every layer before anything is pushed, so initial bits grow with depth.
pub struct MarkovPlainBbCodec {
    model: MarkovChainModel,
    r: u32,
}

impl MarkovPlainBbCodec {
    pub fn new(model: MarkovChainModel, r: u32) -> Self {
        MarkovPlainBbCodec { model, r }
    }
}

impl BbDatumCodec for MarkovPlainBbCodec {
    fn push(&self, m: &mut Message, x: &[u16]) -> Result<PushStats, CoderError> {
        let layers = self.model.layers();
        let lx = self.model.likelihood_up(x[0]);
        let before = m.effective_length();
        // top-down posterior pops
        let mut z = vec![0usize; layers];
        let top_q = self.model.posterior_top_down(&lx, layers - 1, None);
        z[layers - 1] = cat_codec(&top_q, self.r)?
            .pop(m)
            .map_err(|e| map_underflow(e, before))? as usize;
        for l in (0..layers - 1).rev() {
            let q = self.model.posterior_top_down(&lx, l, Some(z[l + 1]));
            z[l] = cat_codec(&q, self.r)?
                .pop(m)
                .map_err(|e| map_underflow(e, before))? as usize;
        }
        let after_pop = m.effective_length();
        // likelihood, then priors bottom-up
        cat_codec(self.model.observation(z[0]), self.r)?.push(m, &(x[0] as u64))?;
        for l in 0..layers - 1 {
            cat_codec(self.model.transition(l, z[l + 1]), self.r)?.push(m, &(z[l] as u64))?;
        }
        cat_codec(self.model.top_prior(), self.r)?.push(m, &(z[layers - 1] as u64))?;
        Ok(PushStats {
            popped_bits: before - after_pop,
            pushed_bits: m.effective_length() - after_pop,
        })
    }

    fn pop(&self, m: &mut Message) -> Result<Vec<u16>, CoderError> {
        let layers = self.model.layers();
        let mut z = vec![0usize; layers];
        z[layers - 1] = cat_codec(self.model.top_prior(), self.r)?.pop(m)? as usize;
        for l in (0..layers - 1).rev() {
            z[l] = cat_codec(self.model.transition(l, z[l + 1]), self.r)?.pop(m)? as usize;
        }
        let x = cat_codec(self.model.observation(z[0]), self.r)?.pop(m)? as u16;
        // restore posterior pops bottom-up
        let lx = self.model.likelihood_up(x);
        for l in 0..layers - 1 {
            let q = self.model.posterior_top_down(&lx, l, Some(z[l + 1]));
            cat_codec(&q, self.r)?.push(m, &(z[l] as u64))?;
        }
        let top_q = self.model.posterior_top_down(&lx, layers - 1, None);
        cat_codec(&top_q, self.r)?.push(m, &(z[layers - 1] as u64))?;
        Ok(vec![x])
    }

    fn dims(&self) -> usize {
        1
    }

    fn symbol_card(&self) -> u16 {
        self.model.obs_card() as u16
    }
}

/// Table 5.1 interleaving: each layer's pop is immediately followed by a
/// push of the layer below, so the instantaneous bits requirement stays
/// bounded as depth grows.
pub struct MarkovBitswapBbCodec {
    model: MarkovChainModel,
    r: u32,
}

impl MarkovBitswapBbCodec {
    pub fn new(model: MarkovChainModel, r: u32) -> Self {
        MarkovBitswapBbCodec { model, r }
    }

    fn bottom_posterior(&self, x: u16) -> Vec<f64> {
        let joint: Vec<f64> = (0..self.model.states())
            .map(|s| self.model.observation(s)[x as usize] * self.model.marginal(0)[s])
            .collect();
        let total: f64 = joint.iter().sum();
        joint.iter().map(|&v| v / total).collect()
    }
}

impl BbDatumCodec for MarkovBitswapBbCodec {
    fn push(&self, m: &mut Message, x: &[u16]) -> Result<PushStats, CoderError> {
        let layers = self.model.layers();
        let before = m.effective_length();
        let mut popped = 0.0;
        let measure_pop = |m: &Message, start: f64| start - m.effective_length();

        // z_0 <- Q(z_0 | x); x -> P(x | z_0)
        let start = m.effective_length();
        let mut z = cat_codec(&self.bottom_posterior(x[0]), self.r)?
            .pop(m)
            .map_err(|e| map_underflow(e, before))? as usize;
        popped += measure_pop(m, start);
        cat_codec(self.model.observation(z), self.r)?.push(m, &(x[0] as u64))?;

        // z_{l+1} <- Q(z_{l+1} | z_l); z_l -> P(z_l | z_{l+1})
        for l in 0..layers - 1 {
            let start = m.effective_length();
            let above = cat_codec(&self.model.inverse_transition(l, z), self.r)?
                .pop(m)
                .map_err(|e| map_underflow(e, before))? as usize;
            popped += measure_pop(m, start);
            cat_codec(self.model.transition(l, above), self.r)?.push(m, &(z as u64))?;
            z = above;
        }
        cat_codec(self.model.top_prior(), self.r)?.push(m, &(z as u64))?;
        let net = m.effective_length() - before;
        Ok(PushStats {
            popped_bits: popped,
            pushed_bits: net + popped,
        })
    }

    fn pop(&self, m: &mut Message) -> Result<Vec<u16>, CoderError> {
        let layers = self.model.layers();
        let mut z = cat_codec(self.model.top_prior(), self.r)?.pop(m)? as usize;
        for l in (0..layers - 1).rev() {
            let below = cat_codec(self.model.transition(l, z), self.r)?.pop(m)? as usize;
            cat_codec(&self.model.inverse_transition(l, below), self.r)?.push(m, &(z as u64))?;
            z = below;
        }
        let x = cat_codec(self.model.observation(z), self.r)?.pop(m)? as u16;
        cat_codec(&self.bottom_posterior(x), self.r)?.push(m, &(z as u64))?;
        Ok(vec![x])
    }

    fn dims(&self) -> usize {
        1
    }

    fn symbol_card(&self) -> u16 {
        self.model.obs_card() as u16
    }
}

/// Hierarchical bits-back with dynamic discretization: each layer's bucket
/// grid comes from the conditional prior given the layers already
/// recovered, so the prior over bucket indices is exactly uniform and the
/// prior pushes are plain uniform-bit pushes.
pub struct HierBbCodec {
    model: HierarchicalGaussianModel,
    r_q: u32,
    r: u32,
}

impl HierBbCodec {
    pub fn new(model: HierarchicalGaussianModel, r_q: u32, r: u32) -> Self {
        HierBbCodec { model, r_q, r }
    }

    pub fn model(&self) -> &HierarchicalGaussianModel {
        &self.model
    }

    fn pixel_codec(&self, mean: f64) -> Result<DiscretizedObsCodec, CoderError> {
        DiscretizedObsCodec::new(
            mean,
            self.model.obs_sigma(),
            PIXEL_LO,
            PIXEL_HI,
            self.r,
            CdfKernel::Gaussian,
        )
    }

    /// Dynamic grids for layer `l` given the already-recovered layer above.
    fn layer_grids(&self, l: usize, z_above: &[f64]) -> Result<Vec<DiscretizationGrid>, CoderError> {
        let (mu, sd) = self.model.prior_params(l, z_above);
        mu.iter()
            .zip(&sd)
            .map(|(&m, &s)| DiscretizationGrid::new(m, s, self.r_q))
            .collect()
    }
}

impl BbDatumCodec for HierBbCodec {
    fn push(&self, m: &mut Message, x: &[u16]) -> Result<PushStats, CoderError> {
        let layers = self.model.num_layers();
        let before = m.effective_length();
        // top-down posterior pops with dynamic grids
        let mut indices: Vec<Vec<u64>> = vec![Vec::new(); layers];
        let mut z_layers: Vec<Vec<f64>> = vec![Vec::new(); layers];
        let mut z_above: Vec<f64> = Vec::new();
        for l in (0..layers).rev() {
            let grids = self.layer_grids(l, &z_above)?;
            let (q_mu, q_sd) = self.model.posterior_params(l, &z_above, x);
            let dim = self.model.layer_dim(l);
            let mut idx = vec![0u64; dim];
            for j in 0..dim {
                let q = GaussianIndexCodec::new(q_mu[j], q_sd[j], grids[j], self.r)?;
                idx[j] = q.pop(m).map_err(|e| map_underflow(e, before))?;
            }
            let z: Vec<f64> = idx.iter().zip(&grids).map(|(&i, g)| g.centre(i)).collect();
            indices[l] = idx;
            z_above = z.clone();
            z_layers[l] = z;
        }
        let after_pop = m.effective_length();
        // likelihood push
        let mean = self.model.obs_mean(&z_layers[0]);
        for pixel in (0..x.len()).rev() {
            self.pixel_codec(mean[pixel])?.push(m, &(x[pixel] as i64))?;
        }
        // uniform prior-index pushes, bottom layer first so the decoder
        // pops the top layer first
        for (l, idx) in indices.iter().enumerate() {
            let _ = l;
            for &i in idx.iter().rev() {
                push_uniform_bits(m, i, self.r_q)?;
            }
        }
        Ok(PushStats {
            popped_bits: before - after_pop,
            pushed_bits: m.effective_length() - after_pop,
        })
    }

    fn pop(&self, m: &mut Message) -> Result<Vec<u16>, CoderError> {
        let layers = self.model.num_layers();
        // uniform index pops, top layer first; grids rebuilt top-down
        let mut indices: Vec<Vec<u64>> = vec![Vec::new(); layers];
        let mut grids_per_layer: Vec<Vec<DiscretizationGrid>> = vec![Vec::new(); layers];
        let mut z_layers: Vec<Vec<f64>> = vec![Vec::new(); layers];
        let mut z_above: Vec<f64> = Vec::new();
        for l in (0..layers).rev() {
            let grids = self.layer_grids(l, &z_above)?;
            let dim = self.model.layer_dim(l);
            let mut idx = vec![0u64; dim];
            for slot in idx.iter_mut() {
                *slot = pop_uniform_bits(m, self.r_q)?;
            }
            let z: Vec<f64> = idx.iter().zip(&grids).map(|(&i, g)| g.centre(i)).collect();
            indices[l] = idx;
            grids_per_layer[l] = grids;
            z_above = z.clone();
            z_layers[l] = z;
        }
        // likelihood pop
        let mean = self.model.obs_mean(&z_layers[0]);
        let mut x = vec![0u16; self.model.obs_dims()];
        for pixel in 0..x.len() {
            x[pixel] = self.pixel_codec(mean[pixel])?.pop(m)? as u16;
        }
        // restore posterior pops, bottom layer first (reverse of encode)
        for l in 0..layers {
            let z_above = if l + 1 < layers {
                z_layers[l + 1].clone()
            } else {
                Vec::new()
            };
            let (q_mu, q_sd) = self.model.posterior_params(l, &z_above, &x);
            let dim = self.model.layer_dim(l);
            for j in (0..dim).rev() {
                let q = GaussianIndexCodec::new(q_mu[j], q_sd[j], grids_per_layer[l][j], self.r)?;
                q.push(m, &indices[l][j])?;
            }
        }
        Ok(x)
    }

    fn dims(&self) -> usize {
        self.model.obs_dims()
    }

    fn symbol_card(&self) -> u16 {
        256
    }
}

/// Table B.1 encode step on the hierarchical model.
pub fn hierarchical_push(
    m: &mut Message,
    x: &[u16],
    codec: &HierBbCodec,
) -> Result<PushStats, CoderError> {
    codec.push(m, x)
}

pub fn hierarchical_pop(m: &mut Message, codec: &HierBbCodec) -> Result<Vec<u16>, CoderError> {
    codec.pop(m)
}

/// Table 5.1 encode step on the Markov chain.
pub fn bitswap_push(
    m: &mut Message,
    x: &[u16],
    codec: &MarkovBitswapBbCodec,
) -> Result<PushStats, CoderError> {
    codec.push(m, x)
}

pub fn bitswap_pop(
    m: &mut Message,
    codec: &MarkovBitswapBbCodec,
) -> Result<Vec<u16>, CoderError> {
    codec.pop(m)
}

/// Datum codec for a model family at coding precision `r` and grid
/// precision `r_q` (clamped to `r`). `interleave` selects the Bit-Swap
/// ordering where the family supports it.
pub fn build_codec(
    model: &Model,
    r_q: u32,
    r: u32,
    interleave: bool,
) -> Result<Box<dyn BbDatumCodec>, CoderError> {
    let r_q = r_q.min(r);
    Ok(match model {
        Model::Categorical(d) => Box::new(CategoricalDatumCodec::new(d.clone())),
        Model::Mixture(parts) => Box::new(MixtureBbCodec::new(parts.clone(), r)),
        Model::LinGauss(m) => Box::new(LinGaussBbCodec::new(m.clone(), r_q, r)),
        Model::Markov(m) => {
            if interleave {
                Box::new(MarkovBitswapBbCodec::new(m.clone(), r))
            } else {
                Box::new(MarkovPlainBbCodec::new(m.clone(), r))
            }
        }
        Model::Hier(m) => Box::new(HierBbCodec::new(m.clone(), r_q, r)),
    })
}

/// Message seeded with `bits` uniform random bits ("extra information" at
/// the head of the chain). Reproducible for a given seed.
pub fn init_random_bits(bits: u64, seed: u64, prec: Precisions) -> Message {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut m = Message::init(prec);
    let mut remaining = bits;
    // Chunk by the widest legal uniform push, not the tail width: a
    // trailing 1-bit push after every word locks the head into a
    // low-entropy renormalization cycle, starving the first pop.
    while remaining > 0 {
        let chunk = remaining.min(prec.max_dist_precision() as u64) as u32;
        let word = rng.gen::<u64>() & ((1u64 << chunk) - 1);
        push_uniform_bits(&mut m, word, chunk).expect("uniform push cannot underflow");
        remaining -= chunk as u64;
    }
    m
}

/// Model-free fallback: every symbol as ceil(log2(card)) uniform bits.
pub struct FallbackCodec {
    pub dims: usize,
    pub bits: u32,
}

impl FallbackCodec {
    pub fn for_codec(codec: &dyn BbDatumCodec) -> Self {
        let card = codec.symbol_card().max(2) as u64;
        FallbackCodec {
            dims: codec.dims(),
            bits: 64 - (card - 1).leading_zeros(),
        }
    }

    pub fn push(&self, m: &mut Message, x: &[u16]) -> Result<(), CoderError> {
        for &xi in x.iter().rev() {
            push_uniform_bits(m, xi as u64, self.bits)?;
        }
        Ok(())
    }

    pub fn pop(&self, m: &mut Message) -> Result<Vec<u16>, CoderError> {
        let mut x = vec![0u16; self.dims];
        for slot in x.iter_mut() {
            *slot = pop_uniform_bits(m, self.bits)? as u16;
        }
        Ok(x)
    }
}

/// Measured cost of the posterior pop phase for one datum, used to size
/// warm-up thresholds. The measurement runs against a scratch message.
pub fn posterior_info_bits(
    codec: &dyn BbDatumCodec,
    x: &[u16],
    prec: Precisions,
) -> Result<f64, CoderError> {
    let scratch_bits = 4096 + 64 * codec.dims() as u64;
    let mut scratch = init_random_bits(scratch_bits, 0x5eed, prec);
    Ok(codec.push(&mut scratch, x)?.popped_bits)
}

/// Default warm-up threshold: 1.2x the measured posterior information of a
/// representative datum, on top of the empty-message length.
pub fn warmup_threshold(
    codec: &dyn BbDatumCodec,
    sample: &[u16],
    prec: Precisions,
) -> Result<f64, CoderError> {
    let base = Message::init(prec).effective_length();
    Ok(base + 1.2 * posterior_info_bits(codec, sample, prec)?)
}

/// Rate accounting for one encoded batch.
#[derive(Debug, Clone)]
pub struct RateReport {
    /// final effective message length, bits
    pub total_bits: f64,
    /// effective length of the message before the first datum
    pub initial_bits: f64,
    /// net effective-length change per datum, in encode order
    pub per_datum_bits: Vec<f64>,
    /// data coded by the fallback during warm-up (prefix of the batch)
    pub fallback_count: usize,
    /// oracle reference, when the caller has one
    pub neg_elbo_reference: Option<f64>,
}

impl RateReport {
    /// Mean net bits per datum over the bits-back portion.
    pub fn net_rate(&self) -> f64 {
        let coded = &self.per_datum_bits[self.fallback_count..];
        if coded.is_empty() {
            return 0.0;
        }
        coded.iter().sum::<f64>() / coded.len() as f64
    }

    /// Moving average of the per-datum rate with the given window.
    pub fn moving_rate(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        self.per_datum_bits
            .windows(w)
            .map(|chunk| chunk.iter().sum::<f64>() / w as f64)
            .collect()
    }
}

/// Chain a batch of data through the codec. Each datum's compressed output
/// is the extra information for the next.
pub fn encode_batch(
    data: &[Vec<u16>],
    codec: &dyn BbDatumCodec,
    init: &ChainInit,
    prec: Precisions,
) -> Result<(Message, RateReport), CoderError> {
    let mut m = match *init {
        ChainInit::RandomBits { bits, seed } => init_random_bits(bits, seed, prec),
        ChainInit::FallbackWarmup { .. } => Message::init(prec),
    };
    let initial_bits = m.effective_length();
    let mut per_datum = Vec::with_capacity(data.len());
    let mut fallback_count = 0usize;
    let fallback = FallbackCodec::for_codec(codec);
    for (i, x) in data.iter().enumerate() {
        let before = m.effective_length();
        match *init {
            ChainInit::FallbackWarmup { threshold_bits }
                if before < threshold_bits && fallback_count == i =>
            {
                fallback.push(&mut m, x)?;
                fallback_count += 1;
            }
            _ => {
                codec.push(&mut m, x)?;
            }
        }
        per_datum.push(m.effective_length() - before);
    }
    let report = RateReport {
        total_bits: m.effective_length(),
        initial_bits,
        per_datum_bits: per_datum,
        fallback_count,
        neg_elbo_reference: None,
    };
    Ok((m, report))
}

/// Exact inverse of [`encode_batch`]: returns the data in original order
/// and the fully drained message, which for a RandomBits chain must equal
/// the initial random message.
pub fn decode_batch(
    mut m: Message,
    codec: &dyn BbDatumCodec,
    n: usize,
    fallback_count: usize,
) -> Result<(Vec<Vec<u16>>, Message), CoderError> {
    let fallback = FallbackCodec::for_codec(codec);
    let mut data = vec![Vec::new(); n];
    for i in (0..n).rev() {
        data[i] = if i < fallback_count {
            fallback.pop(&mut m)?
        } else {
            codec.pop(&mut m)?
        };
    }
    Ok((data, m))
}

/// Minimal RandomBits size (in bits) for which the whole batch encodes
/// without underflow, found by doubling then bisection.
pub fn min_init_bits(
    data: &[Vec<u16>],
    codec: &dyn BbDatumCodec,
    seed: u64,
    prec: Precisions,
) -> Result<u64, CoderError> {
    let ok = |bits: u64| -> Result<bool, CoderError> {
        match encode_batch(data, codec, &ChainInit::RandomBits { bits, seed }, prec) {
            Ok(_) => Ok(true),
            Err(CoderError::Underflow { .. }) | Err(CoderError::InsufficientInitBits { .. }) => {
                Ok(false)
            }
            Err(e) => Err(e),
        }
    };
    if ok(0)? {
        return Ok(0);
    }
    let mut lo = 0u64; // largest known-failing size
    let mut hi = 64u64;
    while !ok(hi)? {
        lo = hi;
        hi *= 2;
        if hi > (1 << 26) {
            return Err(CoderError::InsufficientInitBits {
                needed: hi,
                have: 0,
            });
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

const BATCH_MAGIC: &[u8; 4] = b"BBX1";
const INIT_TAG_RANDOM: u8 = 0;
const INIT_TAG_FALLBACK: u8 = 1;

/// Batch container: extension header (model hash, datum count, init
/// strategy, fallback count) followed by the flattened message.
pub fn write_batch(
    m: &Message,
    model_hash: [u8; 8],
    n: usize,
    init: &ChainInit,
    fallback_count: usize,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BATCH_MAGIC);
    out.extend_from_slice(&model_hash);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    match *init {
        ChainInit::RandomBits { bits, seed } => {
            out.push(INIT_TAG_RANDOM);
            out.extend_from_slice(&bits.to_le_bytes());
            out.extend_from_slice(&seed.to_le_bytes());
        }
        ChainInit::FallbackWarmup { threshold_bits } => {
            out.push(INIT_TAG_FALLBACK);
            out.extend_from_slice(&threshold_bits.to_bits().to_le_bytes());
            out.extend_from_slice(&0u64.to_le_bytes());
        }
    }
    out.extend_from_slice(&(fallback_count as u64).to_le_bytes());
    let v = VMessage::from_scalar(m.clone());
    out.extend_from_slice(&write_bbc2(&v, FlattenMode::Naive));
    out
}

pub struct BatchHeader {
    pub model_hash: [u8; 8],
    pub count: usize,
    pub init: ChainInit,
    pub fallback_count: usize,
}

pub fn read_batch(bytes: &[u8], r: u32) -> Result<(BatchHeader, Message), CoderError> {
    if bytes.len() < 37 || &bytes[..4] != BATCH_MAGIC {
        return Err(CoderError::Format("bad batch container header".into()));
    }
    let mut hash = [0u8; 8];
    hash.copy_from_slice(&bytes[4..12]);
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let tag = bytes[20];
    let a = u64::from_le_bytes(bytes[21..29].try_into().unwrap());
    let b = u64::from_le_bytes(bytes[29..37].try_into().unwrap());
    let init = match tag {
        INIT_TAG_RANDOM => ChainInit::RandomBits { bits: a, seed: b },
        INIT_TAG_FALLBACK => ChainInit::FallbackWarmup {
            threshold_bits: f64::from_bits(a),
        },
        other => {
            return Err(CoderError::Format(format!(
                "unknown init strategy tag {other}"
            )))
        }
    };
    let fallback_count =
        u64::from_le_bytes(bytes[37..45].try_into().unwrap()) as usize;
    let v = read_bbc2(&bytes[45..], r)?;
    let m = v
        .to_scalar()
        .ok_or_else(|| CoderError::Format("batch payload is not single-lane".into()))?;
    Ok((
        BatchHeader {
            model_hash: hash,
            count,
            init,
            fallback_count,
        },
        m,
    ))
}
