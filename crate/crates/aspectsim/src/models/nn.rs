//! Neural-network primitives shared by both model families: linear
//! layers, layer normalization, GELU, masked softmax, dropout, and the
//! Adam optimizer with a linear-decay schedule. Everything is generic
//! over f32/f64 so gradient checks can run in double precision while
//! training runs single precision on BLAS.

use ndarray::{Array1, Array2, Axis, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;

use crate::error::{Error, Result};

pub trait Real: NdFloat + FromPrimitive + Send + Sync + 'static {}
impl Real for f32 {}
impl Real for f64 {}

pub fn real<A: Real>(x: f64) -> A {
    A::from_f64(x).expect("finite literal")
}

/// Standard normal via Box-Muller: deterministic given the RNG stream
/// and bit-identical across calls with the same seed.
pub fn sample_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > 1e-12 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

pub fn normal_init<A: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<A> {
    Array2::from_shape_fn((rows, cols), |_| real(sample_normal(rng) * std))
}

pub fn xavier_uniform<A: Real, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<A> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| {
        real(rng.gen_range(-limit..limit))
    })
}

/// Parameter tensor with its gradient accumulator, exposed to the
/// optimizer as flat slices.
pub struct ParamSlice<'a, A> {
    pub value: &'a mut [A],
    pub grad: &'a mut [A],
}

/// Dense layer `y = x·W + b` with gradient accumulation.
#[derive(Debug, Clone)]
pub struct Linear<A> {
    pub w: Array2<A>,
    pub b: Array1<A>,
    pub gw: Array2<A>,
    pub gb: Array1<A>,
}

impl<A: Real> Linear<A> {
    pub fn new<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: normal_init(rng, fan_in, fan_out, 0.02),
            b: Array1::zeros(fan_out),
            gw: Array2::zeros((fan_in, fan_out)),
            gb: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: &Array2<A>) -> Array2<A> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates dW and db; returns dX.
    pub fn backward(&mut self, x: &Array2<A>, dy: &Array2<A>) -> Array2<A> {
        self.gw = &self.gw + &x.t().dot(dy);
        self.gb = &self.gb + &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn params(&mut self) -> Vec<ParamSlice<'_, A>> {
        vec![
            ParamSlice {
                value: self.w.as_slice_mut().expect("standard layout"),
                grad: self.gw.as_slice_mut().expect("standard layout"),
            },
            ParamSlice {
                value: self.b.as_slice_mut().expect("standard layout"),
                grad: self.gb.as_slice_mut().expect("standard layout"),
            },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<A> {
    pub gamma: Array1<A>,
    pub beta: Array1<A>,
    pub ggamma: Array1<A>,
    pub gbeta: Array1<A>,
    pub eps: A,
}

pub struct LnCache<A> {
    xhat: Array2<A>,
    inv_std: Array1<A>,
}

impl<A: Real> LayerNorm<A> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            ggamma: Array1::zeros(dim),
            gbeta: Array1::zeros(dim),
            eps: real(1e-12),
        }
    }

    /// Row-wise normalization over the feature axis.
    pub fn forward(&self, x: &Array2<A>) -> (Array2<A>, LnCache<A>) {
        let d = real::<A>(x.ncols() as f64);
        let mean = x.sum_axis(Axis(1)) / d;
        let mut xhat = x.clone();
        for (mut row, &m) in xhat.rows_mut().into_iter().zip(mean.iter()) {
            row.mapv_inplace(|v| v - m);
        }
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| A::one() / (v + self.eps).sqrt());
        for (mut row, &s) in xhat.rows_mut().into_iter().zip(inv_std.iter()) {
            row.mapv_inplace(|v| v * s);
        }
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            row.assign(&(&row * &self.gamma + &self.beta));
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LnCache<A>, dy: &Array2<A>) -> Array2<A> {
        let d = real::<A>(dy.ncols() as f64);
        self.ggamma = &self.ggamma + &(dy * &cache.xhat).sum_axis(Axis(0));
        self.gbeta = &self.gbeta + &dy.sum_axis(Axis(0));

        // dxhat = dy * gamma; dx = inv_std * (dxhat - mean(dxhat)
        //          - xhat * mean(dxhat * xhat))
        let mut dxhat = dy.clone();
        for mut row in dxhat.rows_mut() {
            row.assign(&(&row * &self.gamma));
        }
        let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
        let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
        let mut dx = dxhat;
        for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
            let m = mean_dxhat[i];
            let mx = mean_dxhat_xhat[i];
            let s = cache.inv_std[i];
            let xhat_row = cache.xhat.row(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - m - xhat_row[j] * mx) * s;
            }
        }
        dx
    }

    pub fn params(&mut self) -> Vec<ParamSlice<'_, A>> {
        vec![
            ParamSlice {
                value: self.gamma.as_slice_mut().expect("standard layout"),
                grad: self.ggamma.as_slice_mut().expect("standard layout"),
            },
            ParamSlice {
                value: self.beta.as_slice_mut().expect("standard layout"),
                grad: self.gbeta.as_slice_mut().expect("standard layout"),
            },
        ]
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// tanh-approximated GELU (forward and backward use the same formula,
/// so finite-difference checks close exactly).
pub fn gelu<A: Real>(x: &Array2<A>) -> Array2<A> {
    let c = real::<A>(GELU_C);
    let a = real::<A>(GELU_A);
    let half = real::<A>(0.5);
    x.mapv(|v| {
        let u = c * (v + a * v * v * v);
        half * v * (A::one() + u.tanh())
    })
}

pub fn gelu_backward<A: Real>(x: &Array2<A>, dy: &Array2<A>) -> Array2<A> {
    let c = real::<A>(GELU_C);
    let a = real::<A>(GELU_A);
    let half = real::<A>(0.5);
    let three = real::<A>(3.0);
    let mut dx = x.clone();
    dx.zip_mut_with(dy, |v, &g| {
        let u = c * (*v + a * *v * *v * *v);
        let t = u.tanh();
        let du = c * (A::one() + three * a * *v * *v);
        let deriv = half * (A::one() + t) + half * *v * (A::one() - t * t) * du;
        *v = deriv * g;
    });
    dx
}

/// Row-wise softmax over the first `valid` columns; the rest get 0.
pub fn softmax_rows_masked<A: Real>(scores: &Array2<A>, valid: usize) -> Array2<A> {
    let mut probs = scores.clone();
    for mut row in probs.rows_mut() {
        let mut max = A::neg_infinity();
        for j in 0..valid {
            if row[j] > max {
                max = row[j];
            }
        }
        let mut sum = A::zero();
        for j in 0..valid {
            let e = (row[j] - max).exp();
            row[j] = e;
            sum = sum + e;
        }
        for j in 0..valid {
            row[j] = row[j] / sum;
        }
        for j in valid..row.len() {
            row[j] = A::zero();
        }
    }
    probs
}

/// d(scores) given softmax outputs and d(probs): p ⊙ (dp − Σ dp⊙p).
pub fn softmax_backward<A: Real>(probs: &Array2<A>, dprobs: &Array2<A>) -> Array2<A> {
    let dot = (probs * dprobs).sum_axis(Axis(1));
    let mut ds = dprobs.clone();
    for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
        let d = dot[i];
        let p_row = probs.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = p_row[j] * (*v - d);
        }
    }
    ds
}

/// Inverted dropout; the mask doubles as the backward multiplier.
pub fn dropout_mask<A: Real, R: Rng>(
    shape: (usize, usize),
    p: f64,
    rng: &mut R,
) -> Array2<A> {
    let keep = 1.0 - p;
    let scale = real::<A>(1.0 / keep);
    Array2::from_shape_fn(shape, |_| {
        if rng.gen::<f64>() < keep {
            scale
        } else {
            A::zero()
        }
    })
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm. A non-positive `max_norm` disables clipping.
pub fn clip_gradients<A: Real>(params: &mut [ParamSlice<'_, A>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for p in params.iter() {
        for g in p.grad.iter() {
            let g = g.to_f64().unwrap_or(f64::INFINITY);
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = real::<A>(max_norm / norm);
        for p in params.iter_mut() {
            for g in p.grad.iter_mut() {
                *g = *g * scale;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// lr · (1 − step/total): the fine-tuning default.
    LinearDecay,
    Constant,
}

/// Adam with optional decoupled weight decay and a step-count schedule.
pub struct Adam<A> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub total_steps: u64,
    t: u64,
    m: Vec<Vec<A>>,
    v: Vec<Vec<A>>,
}

impl<A: Real> Adam<A> {
    pub fn new(lr: f64, eps: f64, schedule: LrSchedule, total_steps: u64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            weight_decay: 0.0,
            schedule,
            total_steps: total_steps.max(1),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::LinearDecay => {
                let remaining = 1.0 - (self.t as f64 / self.total_steps as f64);
                self.lr * remaining.max(0.0)
            }
        }
    }

    /// One update over every parameter slice; gradients are consumed
    /// (zeroed). Slices must arrive in the same order every step.
    pub fn step(&mut self, params: &mut [ParamSlice<'_, A>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![A::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Training(format!(
                "optimizer saw {} parameter tensors, expected {}",
                params.len(),
                self.m.len()
            )));
        }
        let lr_t = self.current_lr();
        self.t += 1;
        let b1 = real::<A>(self.beta1);
        let b2 = real::<A>(self.beta2);
        let one_m_b1 = real::<A>(1.0 - self.beta1);
        let one_m_b2 = real::<A>(1.0 - self.beta2);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let alpha = real::<A>(lr_t / bc1);
        let inv_sqrt_bc2 = real::<A>(1.0 / bc2.sqrt());
        let eps = real::<A>(self.eps);
        let wd = real::<A>(lr_t * self.weight_decay);

        for (ix, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[ix];
            let v = &mut self.v[ix];
            if p.value.len() != m.len() {
                return Err(Error::Training(format!(
                    "parameter tensor {} changed size: {} vs {}",
                    ix,
                    p.value.len(),
                    m.len()
                )));
            }
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let mut update = alpha * m[i] / (v[i].sqrt() * inv_sqrt_bc2 + eps);
                if self.weight_decay > 0.0 {
                    update = update + wd * p.value[i];
                }
                p.value[i] = p.value[i] - update;
                p.grad[i] = A::zero();
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

pub fn finite<A: Real>(values: &[A]) -> bool {
    values.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_check<F>(param: &mut [f64], loss: &mut F, analytic: &[f64], tol: f64)
    where
        F: FnMut(&[f64]) -> f64,
    {
        let h = 1e-6;
        for i in 0..param.len() {
            let orig = param[i];
            param[i] = orig + h;
            let up = loss(param);
            param[i] = orig - h;
            let down = loss(param);
            param[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                (fd - analytic[i]).abs() / denom < tol,
                "grad mismatch at {}: fd={} analytic={}",
                i,
                fd,
                analytic[i]
            );
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin: Linear<f64> = Linear::new(&mut rng, 4, 3);
        let x = normal_init::<f64, _>(&mut rng, 5, 4, 1.0);
        let target = normal_init::<f64, _>(&mut rng, 5, 3, 1.0);
        // loss = 0.5 * sum((y - target)^2)
        let y = lin.forward(&x);
        let dy = &y - &target;
        let dx = lin.backward(&x, &dy);

        let w0 = lin.w.clone();
        let mut wflat: Vec<f64> = w0.iter().copied().collect();
        let mut loss_of_w = |w: &[f64]| {
            let w = Array2::from_shape_vec((4, 3), w.to_vec()).unwrap();
            let y = x.dot(&w) + &lin.b;
            0.5 * (&y - &target).mapv(|v| v * v).sum()
        };
        let gw: Vec<f64> = lin.gw.iter().copied().collect();
        fd_check(&mut wflat, &mut loss_of_w, &gw, 1e-5);

        let mut xflat: Vec<f64> = x.iter().copied().collect();
        let mut loss_of_x = |xs: &[f64]| {
            let xa = Array2::from_shape_vec((5, 4), xs.to_vec()).unwrap();
            let y = xa.dot(&w0) + &lin.b;
            0.5 * (&y - &target).mapv(|v| v * v).sum()
        };
        let dx_flat: Vec<f64> = dx.iter().copied().collect();
        fd_check(&mut xflat, &mut loss_of_x, &dx_flat, 1e-5);
    }

    #[test]
    fn layernorm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ln: LayerNorm<f64> = LayerNorm::new(6);
        ln.gamma = Array1::from_shape_fn(6, |_| 1.0 + 0.3 * sample_normal(&mut rng));
        ln.beta = Array1::from_shape_fn(6, |_| 0.2 * sample_normal(&mut rng));
        let x = normal_init::<f64, _>(&mut rng, 4, 6, 2.0);
        let target = normal_init::<f64, _>(&mut rng, 4, 6, 1.0);

        let (y, cache) = ln.forward(&x);
        let dy = &y - &target;
        let dx = ln.backward(&cache, &dy);

        let gamma0 = ln.gamma.clone();
        let beta0 = ln.beta.clone();
        let mut xflat: Vec<f64> = x.iter().copied().collect();
        let mut loss_of_x = |xs: &[f64]| {
            let xa = Array2::from_shape_vec((4, 6), xs.to_vec()).unwrap();
            let probe = LayerNorm::<f64> {
                gamma: gamma0.clone(),
                beta: beta0.clone(),
                ggamma: Array1::zeros(6),
                gbeta: Array1::zeros(6),
                eps: 1e-12,
            };
            let (y, _) = probe.forward(&xa);
            0.5 * (&y - &target).mapv(|v| v * v).sum()
        };
        let dx_flat: Vec<f64> = dx.iter().copied().collect();
        fd_check(&mut xflat, &mut loss_of_x, &dx_flat, 1e-5);

        let mut gflat: Vec<f64> = gamma0.iter().copied().collect();
        let mut loss_of_gamma = |gs: &[f64]| {
            let probe = LayerNorm::<f64> {
                gamma: Array1::from_vec(gs.to_vec()),
                beta: beta0.clone(),
                ggamma: Array1::zeros(6),
                gbeta: Array1::zeros(6),
                eps: 1e-12,
            };
            let (y, _) = probe.forward(&x);
            0.5 * (&y - &target).mapv(|v| v * v).sum()
        };
        let ggamma: Vec<f64> = ln.ggamma.iter().copied().collect();
        fd_check(&mut gflat, &mut loss_of_gamma, &ggamma, 1e-5);
    }

    #[test]
    fn gelu_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = normal_init::<f64, _>(&mut rng, 3, 5, 1.5);
        let dy = Array2::ones((3, 5));
        let dx = gelu_backward(&x, &dy);
        let mut xflat: Vec<f64> = x.iter().copied().collect();
        let mut loss = |xs: &[f64]| {
            let xa = Array2::from_shape_vec((3, 5), xs.to_vec()).unwrap();
            gelu(&xa).sum()
        };
        let dx_flat: Vec<f64> = dx.iter().copied().collect();
        fd_check(&mut xflat, &mut loss, &dx_flat, 1e-5);
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_inside_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores = normal_init::<f64, _>(&mut rng, 3, 6, 2.0);
        let probs = softmax_rows_masked(&scores, 4);
        for row in probs.rows() {
            let valid: f64 = row.iter().take(4).sum();
            assert!((valid - 1.0).abs() < 1e-12);
            assert_eq!(row[4], 0.0);
            assert_eq!(row[5], 0.0);
        }
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores = normal_init::<f64, _>(&mut rng, 2, 4, 1.0);
        let weight = normal_init::<f64, _>(&mut rng, 2, 4, 1.0);
        let probs = softmax_rows_masked(&scores, 4);
        let ds = softmax_backward(&probs, &weight);
        let mut flat: Vec<f64> = scores.iter().copied().collect();
        let mut loss = |ss: &[f64]| {
            let sa = Array2::from_shape_vec((2, 4), ss.to_vec()).unwrap();
            (softmax_rows_masked(&sa, 4) * &weight).sum()
        };
        let ds_flat: Vec<f64> = ds.iter().copied().collect();
        fd_check(&mut flat, &mut loss, &ds_flat, 1e-5);
    }

    #[test]
    fn dropout_scales_and_is_seed_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let m1 = dropout_mask::<f64, _>((50, 40), 0.25, &mut r1);
        let m2 = dropout_mask::<f64, _>((50, 40), 0.25, &mut r2);
        assert_eq!(m1, m2);
        let kept = m1.iter().filter(|&&v| v > 0.0).count();
        let frac = kept as f64 / m1.len() as f64;
        assert!((frac - 0.75).abs() < 0.05, "kept fraction {}", frac);
        for &v in m1.iter() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut value = vec![5.0f64, -3.0, 2.0];
        let mut grad = vec![0.0f64; 3];
        let mut adam: Adam<f64> = Adam::new(0.1, 1e-8, LrSchedule::Constant, 1);
        for _ in 0..500 {
            for i in 0..3 {
                grad[i] = 2.0 * value[i];
            }
            let mut params = vec![ParamSlice {
                value: &mut value,
                grad: &mut grad,
            }];
            adam.step(&mut params).unwrap();
        }
        for v in &value {
            assert!(v.abs() < 1e-3, "value {:?}", value);
        }
    }

    #[test]
    fn linear_decay_reaches_zero() {
        let mut adam: Adam<f64> = Adam::new(1.0, 1e-8, LrSchedule::LinearDecay, 10);
        let mut value = vec![1.0f64];
        let mut grad = vec![0.0f64];
        assert!((adam.current_lr() - 1.0).abs() < 1e-12);
        for _ in 0..10 {
            grad[0] = 0.0;
            let mut params = vec![ParamSlice {
                value: &mut value,
                grad: &mut grad,
            }];
            adam.step(&mut params).unwrap();
        }
        assert!(adam.current_lr().abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_shape_changes() {
        let mut adam: Adam<f64> = Adam::new(0.1, 1e-8, LrSchedule::Constant, 1);
        let mut value = vec![1.0f64, 2.0];
        let mut grad = vec![0.0f64, 0.0];
        let mut params = vec![ParamSlice {
            value: &mut value,
            grad: &mut grad,
        }];
        adam.step(&mut params).unwrap();
        let mut value2 = vec![1.0f64];
        let mut grad2 = vec![0.0f64];
        let mut params = vec![ParamSlice {
            value: &mut value2,
            grad: &mut grad2,
        }];
        assert!(adam.step(&mut params).is_err());
    }

    #[test]
    fn clipping_scales_large_gradients_only() {
        let mut value = vec![0.0f64; 2];
        let mut grad = vec![3.0f64, 4.0];
        let mut params = vec![ParamSlice {
            value: &mut value,
            grad: &mut grad,
        }];
        let norm = clip_gradients(&mut params, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((params[0].grad[0] - 0.6).abs() < 1e-12);
        assert!((params[0].grad[1] - 0.8).abs() < 1e-12);

        let mut grad_small = vec![0.3f64, 0.4];
        let mut value_small = vec![0.0f64; 2];
        let mut params = vec![ParamSlice {
            value: &mut value_small,
            grad: &mut grad_small,
        }];
        let norm = clip_gradients(&mut params, 1.0);
        assert!((norm - 0.5).abs() < 1e-12);
        assert_eq!(params[0].grad, &[0.3, 0.4]);

        let mut grad_off = vec![30.0f64];
        let mut value_off = vec![0.0f64];
        let mut params = vec![ParamSlice {
            value: &mut value_off,
            grad: &mut grad_off,
        }];
        clip_gradients(&mut params, 0.0);
        assert_eq!(params[0].grad, &[30.0]);
    }
}
