//! Bidirectional LSTM encoder with additive attention pooling: the
//! recurrent baseline. Items are processed as variable-length
//! sequences of frozen word vectors, so no padding or masking enters
//! the recurrence; gradients stop at the (frozen) input embeddings.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::nn::{dropout_mask, real, xavier_uniform, ParamSlice, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub attn_dim: usize,
}

impl LstmConfig {
    pub fn new(input_dim: usize) -> Self {
        LstmConfig {
            input_dim,
            hidden: 100,
            layers: 2,
            dropout: 0.1,
            attn_dim: 100,
        }
    }

    /// Width of the pooled representation: both directions concatenated.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 || self.attn_dim == 0 {
            return Err(Error::Model("recurrent dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Model(format!(
                "dropout {} is outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// One direction's cell with packed gate weights, order [i, f, g, o].
pub struct LstmCell<A> {
    pub wx: Array2<A>,
    pub wh: Array2<A>,
    pub b: Array1<A>,
    gwx: Array2<A>,
    gwh: Array2<A>,
    gb: Array1<A>,
    hidden: usize,
}

struct CellCache<A> {
    xs: Array2<A>,
    gates: Array2<A>, // (len, 4H) post-activation
    c: Array2<A>,
    tanh_c: Array2<A>,
    h: Array2<A>,
}

impl<A: Real> LstmCell<A> {
    fn new<R: Rng>(rng: &mut R, input_dim: usize, hidden: usize) -> Self {
        let mut b = Array1::zeros(4 * hidden);
        // forget gate opens at 1 so early steps retain state
        b.slice_mut(s![hidden..2 * hidden]).fill(A::one());
        LstmCell {
            wx: xavier_uniform(rng, input_dim, 4 * hidden),
            wh: xavier_uniform(rng, hidden, 4 * hidden),
            b,
            gwx: Array2::zeros((input_dim, 4 * hidden)),
            gwh: Array2::zeros((hidden, 4 * hidden)),
            gb: Array1::zeros(4 * hidden),
            hidden,
        }
    }

    /// Runs the recurrence over `xs` (len, input_dim) left to right.
    fn forward(&self, xs: &Array2<A>) -> CellCache<A> {
        let len = xs.nrows();
        let hd = self.hidden;
        let mut gates = Array2::zeros((len, 4 * hd));
        let mut c = Array2::zeros((len, hd));
        let mut tanh_c = Array2::zeros((len, hd));
        let mut h = Array2::zeros((len, hd));
        let mut h_prev = Array1::zeros(hd);
        let mut c_prev: Array1<A> = Array1::zeros(hd);

        let zx = xs.dot(&self.wx);
        for t in 0..len {
            let mut z = &zx.row(t) + &h_prev.dot(&self.wh) + &self.b;
            for j in 0..4 * hd {
                // sigmoid on i, f, o; tanh on g
                z[j] = if (2 * hd..3 * hd).contains(&j) {
                    z[j].tanh()
                } else {
                    A::one() / (A::one() + (-z[j]).exp())
                };
            }
            for j in 0..hd {
                let i_g = z[j];
                let f_g = z[hd + j];
                let g_g = z[2 * hd + j];
                let o_g = z[3 * hd + j];
                let c_t = f_g * c_prev[j] + i_g * g_g;
                let tc = c_t.tanh();
                c[[t, j]] = c_t;
                tanh_c[[t, j]] = tc;
                h[[t, j]] = o_g * tc;
            }
            gates.row_mut(t).assign(&z);
            h_prev.assign(&h.row(t));
            c_prev.assign(&c.row(t));
        }
        CellCache {
            xs: xs.clone(),
            gates,
            c,
            tanh_c,
            h,
        }
    }

    /// BPTT from d(h) over every step; returns d(xs).
    fn backward(&mut self, cache: &CellCache<A>, dh_ext: &Array2<A>) -> Array2<A> {
        let len = cache.h.nrows();
        let hd = self.hidden;
        let mut dxs = Array2::zeros((len, self.wx.nrows()));
        let mut dh_rec: Array1<A> = Array1::zeros(hd);
        let mut dc_next: Array1<A> = Array1::zeros(hd);

        for t in (0..len).rev() {
            let gates = cache.gates.row(t);
            let mut dz: Array1<A> = Array1::zeros(4 * hd);
            for j in 0..hd {
                let i_g = gates[j];
                let f_g = gates[hd + j];
                let g_g = gates[2 * hd + j];
                let o_g = gates[3 * hd + j];
                let tc = cache.tanh_c[[t, j]];
                let dh_total = dh_ext[[t, j]] + dh_rec[j];
                let dc = dc_next[j] + dh_total * o_g * (A::one() - tc * tc);
                let c_prev = if t == 0 { A::zero() } else { cache.c[[t - 1, j]] };

                dz[j] = dc * g_g * i_g * (A::one() - i_g);
                dz[hd + j] = dc * c_prev * f_g * (A::one() - f_g);
                dz[2 * hd + j] = dc * i_g * (A::one() - g_g * g_g);
                dz[3 * hd + j] = dh_total * tc * o_g * (A::one() - o_g);
                dc_next[j] = dc * f_g;
            }

            let x_t = cache.xs.row(t);
            let dz2 = dz.view().insert_axis(Axis(0));
            self.gwx = &self.gwx + &x_t.insert_axis(Axis(1)).dot(&dz2);
            if t > 0 {
                let h_prev = cache.h.row(t - 1);
                self.gwh = &self.gwh + &h_prev.insert_axis(Axis(1)).dot(&dz2);
            }
            self.gb = &self.gb + &dz;
            dxs.row_mut(t).assign(&dz.dot(&self.wx.t()));
            dh_rec = dz.dot(&self.wh.t());
        }
        dxs
    }

    fn params(&mut self) -> Vec<ParamSlice<'_, A>> {
        vec![
            ParamSlice {
                value: self.wx.as_slice_mut().expect("standard layout"),
                grad: self.gwx.as_slice_mut().expect("standard layout"),
            },
            ParamSlice {
                value: self.wh.as_slice_mut().expect("standard layout"),
                grad: self.gwh.as_slice_mut().expect("standard layout"),
            },
            ParamSlice {
                value: self.b.as_slice_mut().expect("standard layout"),
                grad: self.gb.as_slice_mut().expect("standard layout"),
            },
        ]
    }
}

pub struct BiLayer<A> {
    pub fwd: LstmCell<A>,
    pub bwd: LstmCell<A>,
}

struct BiLayerCache<A> {
    fwd: CellCache<A>,
    bwd: CellCache<A>, // over the reversed sequence
    drop: Option<Array2<A>>,
}

fn reverse_rows<A: Real>(x: &Array2<A>) -> Array2<A> {
    let mut out = x.clone();
    for (i, row) in x.rows().into_iter().enumerate() {
        out.row_mut(x.nrows() - 1 - i).assign(&row);
    }
    out
}

impl<A: Real> BiLayer<A> {
    fn new<R: Rng>(rng: &mut R, input_dim: usize, hidden: usize) -> Self {
        BiLayer {
            fwd: LstmCell::new(rng, input_dim, hidden),
            bwd: LstmCell::new(rng, input_dim, hidden),
        }
    }

    /// Concatenated per-position states (len, 2H), aligned to the
    /// original order.
    fn forward(&self, xs: &Array2<A>) -> (Array2<A>, BiLayerCache<A>) {
        let f = self.fwd.forward(xs);
        let b = self.bwd.forward(&reverse_rows(xs));
        let len = xs.nrows();
        let hd = self.fwd.hidden;
        let mut cat = Array2::zeros((len, 2 * hd));
        cat.slice_mut(s![.., ..hd]).assign(&f.h);
        cat.slice_mut(s![.., hd..]).assign(&reverse_rows(&b.h));
        (
            cat,
            BiLayerCache {
                fwd: f,
                bwd: b,
                drop: None,
            },
        )
    }

    fn backward(&mut self, cache: &BiLayerCache<A>, dcat: &Array2<A>) -> Array2<A> {
        let hd = self.fwd.hidden;
        let df = dcat.slice(s![.., ..hd]).to_owned();
        let db = reverse_rows(&dcat.slice(s![.., hd..]).to_owned());
        let dx_f = self.fwd.backward(&cache.fwd, &df);
        let dx_b = self.bwd.backward(&cache.bwd, &db);
        &dx_f + &reverse_rows(&dx_b)
    }
}

struct ItemCache<A> {
    layers: Vec<BiLayerCache<A>>,
    states: Array2<A>,   // final layer output (len, 2H)
    attn_act: Array2<A>, // tanh(W h + b) rows (len, attn_dim)
    attn_weights: Array1<A>,
}

/// Activations from one forward pass over a batch of items.
pub struct LstmForwardCache<A> {
    items: Vec<ItemCache<A>>,
}

impl<A: Real> LstmForwardCache<A> {
    #[cfg(test)]
    fn attention_weights(&self, item: usize) -> &Array1<A> {
        &self.items[item].attn_weights
    }
}

pub struct BiLstmEncoder<A> {
    pub config: LstmConfig,
    pub layers: Vec<BiLayer<A>>,
    attn_w: Array2<A>,
    attn_b: Array1<A>,
    attn_v: Array1<A>,
    g_attn_w: Array2<A>,
    g_attn_b: Array1<A>,
    g_attn_v: Array1<A>,
}

impl<A: Real> BiLstmEncoder<A> {
    pub fn new<R: Rng>(rng: &mut R, config: LstmConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let in_dim = if l == 0 {
                config.input_dim
            } else {
                2 * config.hidden
            };
            layers.push(BiLayer::new(rng, in_dim, config.hidden));
        }
        let attn_w = xavier_uniform(rng, 2 * config.hidden, config.attn_dim);
        let attn_v = Array1::from_shape_fn(config.attn_dim, |_| {
            real::<A>(rng.gen_range(-0.1..0.1))
        });
        Ok(BiLstmEncoder {
            g_attn_w: Array2::zeros(attn_w.dim()),
            g_attn_b: Array1::zeros(config.attn_dim),
            g_attn_v: Array1::zeros(config.attn_dim),
            attn_w,
            attn_b: Array1::zeros(config.attn_dim),
            attn_v,
            layers,
            config,
        })
    }

    pub fn params(&mut self) -> Vec<ParamSlice<'_, A>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.extend(layer.fwd.params());
            out.extend(layer.bwd.params());
        }
        out.push(ParamSlice {
            value: self.attn_w.as_slice_mut().expect("standard layout"),
            grad: self.g_attn_w.as_slice_mut().expect("standard layout"),
        });
        out.push(ParamSlice {
            value: self.attn_b.as_slice_mut().expect("standard layout"),
            grad: self.g_attn_b.as_slice_mut().expect("standard layout"),
        });
        out.push(ParamSlice {
            value: self.attn_v.as_slice_mut().expect("standard layout"),
            grad: self.g_attn_v.as_slice_mut().expect("standard layout"),
        });
        out
    }

    /// Pooled representations (batch, 2·hidden) from per-item input
    /// sequences (len_i, input_dim). Dropout between stacked layers is
    /// active only when an RNG is supplied.
    pub fn forward<R: Rng>(
        &self,
        inputs: &[Array2<A>],
        mut dropout_rng: Option<&mut R>,
    ) -> Result<(Array2<A>, LstmForwardCache<A>)> {
        if inputs.is_empty() {
            return Err(Error::Model("cannot encode zero sequences".into()));
        }
        for x in inputs {
            if x.nrows() == 0 {
                return Err(Error::Model("cannot encode an empty sequence".into()));
            }
            if x.ncols() != self.config.input_dim {
                return Err(Error::Model(format!(
                    "input width {} does not match configured {}",
                    x.ncols(),
                    self.config.input_dim
                )));
            }
        }

        let mut pooled = Array2::zeros((inputs.len(), self.config.output_dim()));
        let mut items = Vec::with_capacity(inputs.len());
        for (bi, x) in inputs.iter().enumerate() {
            let mut layer_caches = Vec::with_capacity(self.layers.len());
            let mut states = x.clone();
            for (li, layer) in self.layers.iter().enumerate() {
                let (mut cat, mut cache) = layer.forward(&states);
                if li + 1 < self.layers.len() && self.config.dropout > 0.0 {
                    if let Some(rng) = dropout_rng.as_deref_mut() {
                        let mask = dropout_mask::<A, _>(cat.dim(), self.config.dropout, rng);
                        cat = &cat * &mask;
                        cache.drop = Some(mask);
                    }
                }
                layer_caches.push(cache);
                states = cat;
            }

            // additive attention over the final states
            let mut attn_act = states.dot(&self.attn_w);
            for mut row in attn_act.rows_mut() {
                row.assign(&(&row + &self.attn_b));
                row.mapv_inplace(|v| v.tanh());
            }
            let scores = attn_act.dot(&self.attn_v);
            let max = scores.iter().copied().fold(A::neg_infinity(), A::max);
            let exp = scores.mapv(|s| (s - max).exp());
            let sum = exp.sum();
            let weights = exp.mapv(|e| e / sum);
            let rep = states.t().dot(&weights);
            pooled.row_mut(bi).assign(&rep);

            items.push(ItemCache {
                layers: layer_caches,
                states,
                attn_act,
                attn_weights: weights,
            });
        }
        Ok((pooled, LstmForwardCache { items }))
    }

    /// Accumulates every gradient from d(pooled); input embeddings are
    /// frozen, so nothing is returned.
    pub fn backward(&mut self, dpooled: &Array2<A>, cache: &LstmForwardCache<A>) {
        for (bi, item) in cache.items.iter().enumerate() {
            let drep = dpooled.row(bi);
            let states = &item.states;
            let weights = &item.attn_weights;

            // rep = states^T · weights
            let mut dstates: Array2<A> = Array2::zeros(states.dim());
            for (t, mut row) in dstates.rows_mut().into_iter().enumerate() {
                row.assign(&drep.mapv(|d| d * weights[t]));
            }
            let dweights = states.dot(&drep);

            // softmax over scores
            let dot = (&dweights * weights).sum();
            let dscores = weights * &dweights.mapv(|d| d - dot);

            // scores_t = v^T tanh(W h_t + b)
            let mut dact = Array2::zeros(item.attn_act.dim());
            for (t, mut row) in dact.rows_mut().into_iter().enumerate() {
                let a = item.attn_act.row(t);
                self.g_attn_v = &self.g_attn_v + &a.mapv(|v| v * dscores[t]);
                row.assign(&self.attn_v.mapv(|v| v * dscores[t]));
                let one = A::one();
                row.zip_mut_with(&a, |d, &av| *d = *d * (one - av * av));
            }
            self.g_attn_w = &self.g_attn_w + &states.t().dot(&dact);
            self.g_attn_b = &self.g_attn_b + &dact.sum_axis(Axis(0));
            dstates = &dstates + &dact.dot(&self.attn_w.t());

            for (layer, lc) in self.layers.iter_mut().zip(item.layers.iter()).rev() {
                if let Some(mask) = &lc.drop {
                    dstates = &dstates * mask;
                }
                dstates = layer.backward(lc, &dstates);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nn::normal_init;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> LstmConfig {
        LstmConfig {
            input_dim: 5,
            hidden: 4,
            layers: 2,
            dropout: 0.0,
            attn_dim: 3,
        }
    }

    fn tiny_encoder(seed: u64) -> BiLstmEncoder<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BiLstmEncoder::new(&mut rng, tiny_config()).unwrap()
    }

    fn toy_inputs(seed: u64) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        vec![
            normal_init(&mut rng, 4, 5, 1.0),
            normal_init(&mut rng, 3, 5, 1.0),
        ]
    }

    #[test]
    fn pooled_shape_and_attention_weights() {
        let enc = tiny_encoder(1);
        let inputs = toy_inputs(2);
        let (pooled, cache) = enc.forward::<ChaCha8Rng>(&inputs, None).unwrap();
        assert_eq!(pooled.dim(), (2, 8));
        for item in 0..2 {
            let w = cache.attention_weights(item);
            assert_eq!(w.len(), inputs[item].nrows());
            assert!((w.sum() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&a| a > 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let enc = tiny_encoder(3);
        let inputs = toy_inputs(4);
        let (p1, _) = enc.forward::<ChaCha8Rng>(&inputs, None).unwrap();
        let (p2, _) = enc.forward::<ChaCha8Rng>(&inputs, None).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let enc = tiny_encoder(5);
        assert!(enc.forward::<ChaCha8Rng>(&[], None).is_err());
        let empty = Array2::<f64>::zeros((0, 5));
        assert!(enc.forward::<ChaCha8Rng>(&[empty], None).is_err());
        let wrong_width = Array2::<f64>::zeros((3, 7));
        assert!(enc.forward::<ChaCha8Rng>(&[wrong_width], None).is_err());
    }

    #[test]
    fn single_step_sequences_work() {
        let enc = tiny_encoder(6);
        let one = vec![Array2::<f64>::ones((1, 5))];
        let (pooled, cache) = enc.forward::<ChaCha8Rng>(&one, None).unwrap();
        assert_eq!(pooled.dim(), (1, 8));
        assert!((cache.attention_weights(0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_for_all_parameters() {
        let mut enc = tiny_encoder(7);
        let inputs = toy_inputs(8);
        let mut probe_rng = ChaCha8Rng::seed_from_u64(9);
        let probe = normal_init::<f64, _>(&mut probe_rng, 2, 8, 1.0);

        let (_, cache) = enc.forward::<ChaCha8Rng>(&inputs, None).unwrap();
        enc.backward(&probe, &cache);
        let analytic: Vec<Vec<f64>> = enc.params().iter().map(|p| p.grad.to_vec()).collect();

        let h = 1e-5;
        for tensor in 0..analytic.len() {
            for i in 0..analytic[tensor].len() {
                let orig = enc.params()[tensor].value[i];
                enc.params()[tensor].value[i] = orig + h;
                let (pooled, _) = enc.forward::<ChaCha8Rng>(&inputs, None).unwrap();
                let up = (&pooled * &probe).sum();
                enc.params()[tensor].value[i] = orig - h;
                let (pooled, _) = enc.forward::<ChaCha8Rng>(&inputs, None).unwrap();
                let down = (&pooled * &probe).sum();
                enc.params()[tensor].value[i] = orig;

                let fd = (up - down) / (2.0 * h);
                let an = analytic[tensor][i];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "tensor {tensor} element {i}: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn dropout_between_layers_is_seeded() {
        let mut config = tiny_config();
        config.dropout = 0.4;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let enc: BiLstmEncoder<f64> = BiLstmEncoder::new(&mut rng, config).unwrap();
        let inputs = toy_inputs(11);
        let mut d1 = ChaCha8Rng::seed_from_u64(20);
        let mut d2 = ChaCha8Rng::seed_from_u64(20);
        let mut d3 = ChaCha8Rng::seed_from_u64(21);
        let (p1, _) = enc.forward(&inputs, Some(&mut d1)).unwrap();
        let (p2, _) = enc.forward(&inputs, Some(&mut d2)).unwrap();
        let (p3, _) = enc.forward(&inputs, Some(&mut d3)).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1, p3);
    }
}
