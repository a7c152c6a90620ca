//! Bidirectional transformer encoder for sequence pairs: summed token,
//! position, and segment embeddings feed a stack of post-layer-norm
//! blocks (multi-head self-attention, then a GELU feed-forward), and a
//! tanh pooler over the leading classification token produces the pair
//! representation.
//!
//! Padding never enters the math: attention, and therefore every
//! position-mixing step, is computed over each item's valid prefix
//! only, so a pair's representation is identical whether it is encoded
//! alone or padded inside a larger batch. Attention probabilities are
//! recomputed during the backward pass instead of cached, which keeps
//! activation memory linear in sequence length.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::encode::EncodedPair;
use super::nn::{
    dropout_mask, gelu, gelu_backward, normal_init, real, softmax_backward, softmax_rows_masked,
    LayerNorm, Linear, LnCache, ParamSlice, Real,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_position: usize,
    pub type_vocab: usize,
    pub dropout: f64,
}

impl TransformerConfig {
    /// Standard base-size encoder: 12 layers, hidden 768, 12 heads.
    pub fn base(vocab_size: usize) -> Self {
        TransformerConfig {
            vocab_size,
            hidden: 768,
            layers: 12,
            heads: 12,
            intermediate: 3072,
            max_position: 512,
            type_vocab: 2,
            dropout: 0.1,
        }
    }

    /// Miniature configuration for tests and gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        TransformerConfig {
            vocab_size,
            hidden: 8,
            layers: 2,
            heads: 2,
            intermediate: 16,
            max_position: 16,
            type_vocab: 2,
            dropout: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.hidden == 0
            || self.layers == 0
            || self.heads == 0
            || self.intermediate == 0
            || self.max_position == 0
            || self.type_vocab == 0
        {
            return Err(Error::Model("transformer dimensions must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Model(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Model(format!(
                "dropout {} is outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let emb = (self.vocab_size + self.max_position + self.type_vocab) * h + 2 * h;
        let attn = 4 * (h * h + h);
        let ffn = h * self.intermediate + self.intermediate + self.intermediate * h + h;
        let per_layer = attn + ffn + 4 * h;
        let pooler = h * h + h;
        emb + self.layers * per_layer + pooler
    }
}

/// A batch of encoded pairs padded to the longest member; `lengths`
/// records each item's valid prefix.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub token_ids: Vec<Vec<u32>>,
    pub segment_ids: Vec<Vec<u8>>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

impl EncodedBatch {
    pub fn from_pairs(pairs: &[EncodedPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Model("cannot batch zero encoded pairs".into()));
        }
        let lengths: Vec<usize> = pairs.iter().map(|p| p.len()).collect();
        if lengths.iter().any(|&l| l == 0) {
            return Err(Error::Model("encoded pair with no tokens".into()));
        }
        let max_len = *lengths.iter().max().unwrap();
        Ok(EncodedBatch {
            token_ids: pairs.iter().map(|p| p.token_ids.clone()).collect(),
            segment_ids: pairs.iter().map(|p| p.segment_ids.clone()).collect(),
            lengths,
            max_len,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }
}

struct LayerCache<A> {
    x_in: Array2<A>,
    q: Array2<A>,
    k: Array2<A>,
    v: Array2<A>,
    context: Array2<A>,
    attn_drop: Option<Array2<A>>,
    ln1: LnCache<A>,
    ln1_out: Array2<A>,
    ff_pre: Array2<A>,
    ff_drop: Option<Array2<A>>,
    ln2: LnCache<A>,
}

/// Activations retained from a forward pass; feeds `backward`.
pub struct ForwardCache<A> {
    lengths: Vec<usize>,
    max_len: usize,
    token_ids: Vec<Vec<u32>>,
    segment_ids: Vec<Vec<u8>>,
    emb_ln: LnCache<A>,
    emb_drop: Option<Array2<A>>,
    layers: Vec<LayerCache<A>>,
    final_hidden: Array2<A>,
    pooled: Array2<A>,
}

pub struct EncoderLayer<A> {
    pub wq: Linear<A>,
    pub wk: Linear<A>,
    pub wv: Linear<A>,
    pub wo: Linear<A>,
    pub ln1: LayerNorm<A>,
    pub ff1: Linear<A>,
    pub ff2: Linear<A>,
    pub ln2: LayerNorm<A>,
}

impl<A: Real> EncoderLayer<A> {
    fn new<R: Rng>(rng: &mut R, config: &TransformerConfig) -> Self {
        let h = config.hidden;
        EncoderLayer {
            wq: Linear::new(rng, h, h),
            wk: Linear::new(rng, h, h),
            wv: Linear::new(rng, h, h),
            wo: Linear::new(rng, h, h),
            ln1: LayerNorm::new(h),
            ff1: Linear::new(rng, h, config.intermediate),
            ff2: Linear::new(rng, config.intermediate, h),
            ln2: LayerNorm::new(h),
        }
    }

    fn params(&mut self) -> Vec<ParamSlice<'_, A>> {
        let mut out = self.wq.params();
        out.extend(self.wk.params());
        out.extend(self.wv.params());
        out.extend(self.wo.params());
        out.extend(self.ln1.params());
        out.extend(self.ff1.params());
        out.extend(self.ff2.params());
        out.extend(self.ln2.params());
        out
    }
}

pub struct Transformer<A> {
    pub config: TransformerConfig,
    pub tok_emb: Array2<A>,
    pub pos_emb: Array2<A>,
    pub seg_emb: Array2<A>,
    g_tok: Array2<A>,
    g_pos: Array2<A>,
    g_seg: Array2<A>,
    pub emb_ln: LayerNorm<A>,
    pub layers: Vec<EncoderLayer<A>>,
    pub pooler: Linear<A>,
}

impl<A: Real> Transformer<A> {
    pub fn new<R: Rng>(rng: &mut R, config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        Ok(Transformer {
            tok_emb: normal_init(rng, config.vocab_size, h, 0.02),
            pos_emb: normal_init(rng, config.max_position, h, 0.02),
            seg_emb: normal_init(rng, config.type_vocab, h, 0.02),
            g_tok: Array2::zeros((config.vocab_size, h)),
            g_pos: Array2::zeros((config.max_position, h)),
            g_seg: Array2::zeros((config.type_vocab, h)),
            emb_ln: LayerNorm::new(h),
            layers: (0..config.layers)
                .map(|_| EncoderLayer::new(rng, &config))
                .collect(),
            pooler: Linear::new(rng, h, h),
            config,
        })
    }

    /// Every learnable tensor in a stable order, paired with its
    /// gradient accumulator.
    pub fn params(&mut self) -> Vec<ParamSlice<'_, A>> {
        let mut out = vec![
            ParamSlice {
                value: self.tok_emb.as_slice_mut().expect("standard layout"),
                grad: self.g_tok.as_slice_mut().expect("standard layout"),
            },
            ParamSlice {
                value: self.pos_emb.as_slice_mut().expect("standard layout"),
                grad: self.g_pos.as_slice_mut().expect("standard layout"),
            },
            ParamSlice {
                value: self.seg_emb.as_slice_mut().expect("standard layout"),
                grad: self.g_seg.as_slice_mut().expect("standard layout"),
            },
        ];
        out.extend(self.emb_ln.params());
        for layer in &mut self.layers {
            out.extend(layer.params());
        }
        out.extend(self.pooler.params());
        out
    }

    fn validate_batch(&self, batch: &EncodedBatch) -> Result<()> {
        if batch.max_len > self.config.max_position {
            return Err(Error::Model(format!(
                "sequence length {} exceeds the {}-position table",
                batch.max_len, self.config.max_position
            )));
        }
        for (ids, segs) in batch.token_ids.iter().zip(&batch.segment_ids) {
            if ids.len() != segs.len() {
                return Err(Error::Model("token/segment length mismatch".into()));
            }
            if ids.iter().any(|&t| t as usize >= self.config.vocab_size) {
                return Err(Error::Model("token id outside the vocabulary".into()));
            }
            if segs.iter().any(|&g| g as usize >= self.config.type_vocab) {
                return Err(Error::Model("segment id outside the type table".into()));
            }
        }
        Ok(())
    }

    /// Returns the pooled pair representations `(batch, hidden)` and
    /// the activations needed for `backward`. Dropout is active only
    /// when an RNG is supplied.
    pub fn forward<R: Rng>(
        &self,
        batch: &EncodedBatch,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<(Array2<A>, ForwardCache<A>)> {
        self.validate_batch(batch)?;
        let b = batch.batch_size();
        let l = batch.max_len;
        let h = self.config.hidden;
        let rows = b * l;
        let p_drop = self.config.dropout;

        let mut x: Array2<A> = Array2::zeros((rows, h));
        for (bi, (ids, segs)) in batch.token_ids.iter().zip(&batch.segment_ids).enumerate() {
            for (t, (&id, &seg)) in ids.iter().zip(segs.iter()).enumerate() {
                let mut row = x.row_mut(bi * l + t);
                row.assign(
                    &(&self.tok_emb.row(id as usize)
                        + &self.pos_emb.row(t)
                        + &self.seg_emb.row(seg as usize)),
                );
            }
        }
        let (mut x, emb_ln_cache) = self.emb_ln.forward(&x);
        let emb_drop = dropout_rng.as_deref_mut().filter(|_| p_drop > 0.0).map(|rng| {
            let mask = dropout_mask::<A, _>((rows, h), p_drop, rng);
            x = &x * &mask;
            mask
        });

        let dh = self.config.head_dim();
        let scale = real::<A>(1.0 / (dh as f64).sqrt());
        let mut caches = Vec::with_capacity(self.layers.len());

        for layer in &self.layers {
            let q = layer.wq.forward(&x);
            let k = layer.wk.forward(&x);
            let v = layer.wv.forward(&x);

            let mut context: Array2<A> = Array2::zeros((rows, h));
            for (bi, &len) in batch.lengths.iter().enumerate() {
                let row_range = bi * l..bi * l + len;
                for head in 0..self.config.heads {
                    let col_range = head * dh..(head + 1) * dh;
                    let q_h = q.slice(s![row_range.clone(), col_range.clone()]).to_owned();
                    let k_h = k.slice(s![row_range.clone(), col_range.clone()]).to_owned();
                    let v_h = v.slice(s![row_range.clone(), col_range.clone()]).to_owned();
                    let scores = q_h.dot(&k_h.t()).mapv(|s| s * scale);
                    let probs = softmax_rows_masked(&scores, len);
                    let ctx = probs.dot(&v_h);
                    context
                        .slice_mut(s![row_range.clone(), col_range])
                        .assign(&ctx);
                }
            }

            let mut attn_out = layer.wo.forward(&context);
            let attn_drop = dropout_rng.as_deref_mut().filter(|_| p_drop > 0.0).map(|rng| {
                let mask = dropout_mask::<A, _>((rows, h), p_drop, rng);
                attn_out = &attn_out * &mask;
                mask
            });

            let res1 = &x + &attn_out;
            let (ln1_out, ln1_cache) = layer.ln1.forward(&res1);

            let ff_pre = layer.ff1.forward(&ln1_out);
            let act = gelu(&ff_pre);
            let mut ff_out = layer.ff2.forward(&act);
            let ff_drop = dropout_rng.as_deref_mut().filter(|_| p_drop > 0.0).map(|rng| {
                let mask = dropout_mask::<A, _>((rows, h), p_drop, rng);
                ff_out = &ff_out * &mask;
                mask
            });

            let res2 = &ln1_out + &ff_out;
            let (x_next, ln2_cache) = layer.ln2.forward(&res2);

            caches.push(LayerCache {
                x_in: x,
                q,
                k,
                v,
                context,
                attn_drop,
                ln1: ln1_cache,
                ln1_out,
                ff_pre,
                ff_drop,
                ln2: ln2_cache,
            });
            x = x_next;
        }

        let mut cls: Array2<A> = Array2::zeros((b, h));
        for bi in 0..b {
            cls.row_mut(bi).assign(&x.row(bi * l));
        }
        let pooled = self.pooler.forward(&cls).mapv(|v| v.tanh());

        let cache = ForwardCache {
            lengths: batch.lengths.clone(),
            max_len: l,
            token_ids: batch.token_ids.clone(),
            segment_ids: batch.segment_ids.clone(),
            emb_ln: emb_ln_cache,
            emb_drop,
            layers: caches,
            final_hidden: x,
            pooled: pooled.clone(),
        };
        Ok((pooled, cache))
    }

    /// Accumulates gradients for every parameter from d(pooled).
    pub fn backward(&mut self, dpooled: &Array2<A>, cache: &ForwardCache<A>) {
        let b = cache.lengths.len();
        let l = cache.max_len;
        let h = self.config.hidden;
        let rows = b * l;
        let dh = self.config.head_dim();
        let scale = real::<A>(1.0 / (dh as f64).sqrt());

        // through the tanh pooler
        let dpre = dpooled * &cache.pooled.mapv(|y| A::one() - y * y);
        let mut cls: Array2<A> = Array2::zeros((b, h));
        for bi in 0..b {
            cls.row_mut(bi).assign(&cache.final_hidden.row(bi * l));
        }
        let dcls = self.pooler.backward(&cls, &dpre);

        let mut dx: Array2<A> = Array2::zeros((rows, h));
        for bi in 0..b {
            dx.row_mut(bi * l).assign(&dcls.row(bi));
        }

        for (layer, lc) in self.layers.iter_mut().zip(cache.layers.iter()).rev() {
            let dres2 = layer.ln2.backward(&lc.ln2, &dx);
            let dff_out = match &lc.ff_drop {
                Some(mask) => &dres2 * mask,
                None => dres2.clone(),
            };
            let act = gelu(&lc.ff_pre);
            let dact = layer.ff2.backward(&act, &dff_out);
            let dff_pre = gelu_backward(&lc.ff_pre, &dact);
            let dln1_out = &layer.ff1.backward(&lc.ln1_out, &dff_pre) + &dres2;

            let dres1 = layer.ln1.backward(&lc.ln1, &dln1_out);
            let dattn_out = match &lc.attn_drop {
                Some(mask) => &dres1 * mask,
                None => dres1.clone(),
            };
            let dcontext = layer.wo.backward(&lc.context, &dattn_out);

            let mut dq: Array2<A> = Array2::zeros((rows, h));
            let mut dk: Array2<A> = Array2::zeros((rows, h));
            let mut dv: Array2<A> = Array2::zeros((rows, h));
            for (bi, &len) in cache.lengths.iter().enumerate() {
                let row_range = bi * l..bi * l + len;
                for head in 0..self.config.heads {
                    let col_range = head * dh..(head + 1) * dh;
                    let q_h = lc.q.slice(s![row_range.clone(), col_range.clone()]).to_owned();
                    let k_h = lc.k.slice(s![row_range.clone(), col_range.clone()]).to_owned();
                    let v_h = lc.v.slice(s![row_range.clone(), col_range.clone()]).to_owned();
                    let scores = q_h.dot(&k_h.t()).mapv(|s| s * scale);
                    let probs = softmax_rows_masked(&scores, len);

                    let dctx = dcontext
                        .slice(s![row_range.clone(), col_range.clone()])
                        .to_owned();
                    let dprobs = dctx.dot(&v_h.t());
                    let dv_h = probs.t().dot(&dctx);
                    let dscores = softmax_backward(&probs, &dprobs).mapv(|s| s * scale);
                    let dq_h = dscores.dot(&k_h);
                    let dk_h = dscores.t().dot(&q_h);

                    dq.slice_mut(s![row_range.clone(), col_range.clone()])
                        .assign(&dq_h);
                    dk.slice_mut(s![row_range.clone(), col_range.clone()])
                        .assign(&dk_h);
                    dv.slice_mut(s![row_range.clone(), col_range]).assign(&dv_h);
                }
            }

            let mut dx_in = dres1;
            dx_in = &dx_in + &layer.wq.backward(&lc.x_in, &dq);
            dx_in = &dx_in + &layer.wk.backward(&lc.x_in, &dk);
            dx_in = &dx_in + &layer.wv.backward(&lc.x_in, &dv);
            dx = dx_in;
        }

        let dln_out = match &cache.emb_drop {
            Some(mask) => &dx * mask,
            None => dx,
        };
        let demb = self.emb_ln.backward(&cache.emb_ln, &dln_out);
        for (bi, (ids, segs)) in cache
            .token_ids
            .iter()
            .zip(&cache.segment_ids)
            .enumerate()
        {
            for (t, (&id, &seg)) in ids.iter().zip(segs.iter()).enumerate() {
                let row = demb.row(bi * l + t);
                let mut g = self.g_tok.row_mut(id as usize);
                g += &row;
                let mut g = self.g_pos.row_mut(t);
                g += &row;
                let mut g = self.g_seg.row_mut(seg as usize);
                g += &row;
            }
        }
    }
}
