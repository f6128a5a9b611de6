//! Differentiable operations on [`Var`].

use std::rc::Rc;

use crate::kernels;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;

fn same_dims(a: &Var<'_>, b: &Var<'_>, op: &str) {
    assert_eq!(a.dims(), b.dims(), "{op}: shape mismatch");
}

impl<'t> Var<'t> {
    pub fn add(&self, other: &Var<'t>) -> Var<'t> {
        same_dims(self, other, "add");
        let out = self.value().zip_map(&other.value(), |a, b| a + b);
        self.tape()
            .op(&[*self, *other], out, |g| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&self, other: &Var<'t>) -> Var<'t> {
        same_dims(self, other, "sub");
        let out = self.value().zip_map(&other.value(), |a, b| a - b);
        self.tape()
            .op(&[*self, *other], out, |g| vec![Some(g.clone()), Some(g.scale(-1.0))])
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&self, other: &Var<'t>) -> Var<'t> {
        same_dims(self, other, "mul");
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x * y);
        self.tape().op(&[*self, *other], out, move |g| {
            vec![
                Some(g.zip_map(&b, |g, y| g * y)),
                Some(g.zip_map(&a, |g, x| g * x)),
            ]
        })
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        let out = self.value().scale(s);
        self.tape().op(&[*self], out, move |g| vec![Some(g.scale(s))])
    }

    /// `|self − other|`; the subgradient at zero is taken as zero.
    pub fn abs_diff(&self, other: &Var<'t>) -> Var<'t> {
        same_dims(self, other, "abs_diff");
        let sign = self
            .value()
            .zip_map(&other.value(), |a, b| (a - b).signum() * f64::from(a != b));
        let out = self.value().zip_map(&other.value(), |a, b| (a - b).abs());
        self.tape().op(&[*self, *other], out, move |g| {
            let ga = g.zip_map(&sign, |g, s| g * s);
            let gb = ga.scale(-1.0);
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn relu(&self) -> Var<'t> {
        let x = self.value();
        let out = x.map(|v| v.max(0.0));
        self.tape().op(&[*self], out, move |g| {
            vec![Some(g.zip_map(&x, |g, v| if v > 0.0 { g } else { 0.0 }))]
        })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let out = Rc::new(self.value().map(kernels::sigmoid));
        let saved = Rc::clone(&out);
        self.tape().op(&[*self], (*out).clone(), move |g| {
            vec![Some(g.zip_map(&saved, |g, s| g * s * (1.0 - s)))]
        })
    }

    /// Multiplies every channel by a single-channel map: `[N,C,H,W] ⊙ [N,1,H,W]`.
    pub fn mul_spatial(&self, map: &Var<'t>) -> Var<'t> {
        let (x, m) = (self.value(), map.value());
        let [n, c, h, w] = x.dims();
        assert_eq!(m.dims(), [n, 1, h, w], "mul_spatial: map must be [N,1,H,W]");
        let out = Tensor::from_fn(x.dims(), |s, ch, i, j| x.at(s, ch, i, j) * m.at(s, 0, i, j));
        self.tape().op(&[*self, *map], out, move |g| {
            let gx = Tensor::from_fn(g.dims(), |s, ch, i, j| g.at(s, ch, i, j) * m.at(s, 0, i, j));
            let mut gm = Tensor::zeros(m.dims());
            for s in 0..n {
                for ch in 0..c {
                    let gp = g.plane_slice(s, ch);
                    let xp = x.plane_slice(s, ch);
                    for (p, acc) in gm.plane_slice_mut(s, 0).iter_mut().enumerate() {
                        *acc += gp[p] * xp[p];
                    }
                }
            }
            vec![Some(gx), Some(gm)]
        })
    }

    /// Multiplies each channel by a per-sample weight: `[N,C,H,W] ⊙ [N,C,1,1]`.
    pub fn mul_channel(&self, weights: &Var<'t>) -> Var<'t> {
        let (x, wt) = (self.value(), weights.value());
        let [n, c, _, _] = x.dims();
        assert_eq!(wt.dims(), [n, c, 1, 1], "mul_channel: weights must be [N,C,1,1]");
        let out = Tensor::from_fn(x.dims(), |s, ch, i, j| x.at(s, ch, i, j) * wt.at(s, ch, 0, 0));
        self.tape().op(&[*self, *weights], out, move |g| {
            let gx = Tensor::from_fn(g.dims(), |s, ch, i, j| g.at(s, ch, i, j) * wt.at(s, ch, 0, 0));
            let gw = Tensor::from_fn(wt.dims(), |s, ch, _, _| {
                g.plane_slice(s, ch)
                    .iter()
                    .zip(x.plane_slice(s, ch))
                    .map(|(a, b)| a * b)
                    .sum()
            });
            vec![Some(gx), Some(gw)]
        })
    }

    /// Stride-1 convolution; `weight` is `[O, C, k, k]`, `bias` `[1, O, 1, 1]`.
    pub fn conv2d(&self, weight: &Var<'t>, bias: Option<&Var<'t>>, pad: usize) -> Var<'t> {
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(Var::value);
        let out = kernels::conv2d(&x, &w, b.as_deref(), pad);
        let mut parents = vec![*self, *weight];
        parents.extend(bias.copied());
        let has_bias = bias.is_some();
        self.tape().op(&parents, out, move |g| {
            let (dx, dw, db) = kernels::conv2d_backward(&x, &w, g, pad);
            let mut grads = vec![Some(dx), Some(dw)];
            if has_bias {
                grads.push(Some(db));
            }
            grads
        })
    }

    /// Kernel-2 stride-2 transposed convolution; `weight` is `[C, O, 2, 2]`.
    pub fn conv_transpose2x2(&self, weight: &Var<'t>, bias: Option<&Var<'t>>) -> Var<'t> {
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(Var::value);
        let out = kernels::conv_transpose2x2(&x, &w, b.as_deref());
        let mut parents = vec![*self, *weight];
        parents.extend(bias.copied());
        let has_bias = bias.is_some();
        self.tape().op(&parents, out, move |g| {
            let (dx, dw, db) = kernels::conv_transpose2x2_backward(&x, &w, g);
            let mut grads = vec![Some(dx), Some(dw)];
            if has_bias {
                grads.push(Some(db));
            }
            grads
        })
    }

    /// Per-channel 2×2 stride-2 convolution with bias.
    pub fn depthwise2x2(&self, weight: &Var<'t>, bias: &Var<'t>) -> Var<'t> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let out = kernels::depthwise2x2(&x, &w, &b);
        self.tape().op(&[*self, *weight, *bias], out, move |g| {
            let (dx, dw, db) = kernels::depthwise2x2_backward(&x, &w, g);
            vec![Some(dx), Some(dw), Some(db)]
        })
    }

    /// Max pooling, kernel = stride = `k`.
    pub fn max_pool(&self, k: usize) -> Var<'t> {
        let x = self.value();
        let in_dims = x.dims();
        let (out, arg) = kernels::max_pool(&x, k);
        self.tape().op(&[*self], out, move |g| {
            let mut dx = Tensor::zeros(in_dims);
            for (&idx, &gv) in arg.iter().zip(g.data()) {
                dx.data_mut()[idx] += gv;
            }
            vec![Some(dx)]
        })
    }

    /// Average pooling, kernel = stride = `k`.
    pub fn avg_pool(&self, k: usize) -> Var<'t> {
        if k == 1 {
            return *self;
        }
        let out = kernels::avg_pool(&self.value(), k);
        self.tape()
            .op(&[*self], out, move |g| vec![Some(kernels::avg_pool_backward(g, k))])
    }

    /// Per-pixel channel maximum, `[N, 1, H, W]`.
    pub fn channel_max(&self) -> Var<'t> {
        let x = self.value();
        let in_dims = x.dims();
        let (out, arg) = kernels::channel_max(&x);
        self.tape().op(&[*self], out, move |g| {
            let [n, _, h, w] = in_dims;
            let mut dx = Tensor::zeros(in_dims);
            for s in 0..n {
                for p in 0..h * w {
                    let ch = arg[s * h * w + p];
                    dx.plane_slice_mut(s, ch)[p] += g.plane_slice(s, 0)[p];
                }
            }
            vec![Some(dx)]
        })
    }

    /// Per-pixel channel mean, `[N, 1, H, W]`.
    pub fn channel_mean(&self) -> Var<'t> {
        let in_dims = self.dims();
        let out = kernels::channel_mean(&self.value());
        self.tape().op(&[*self], out, move |g| {
            let inv = 1.0 / in_dims[1] as f64;
            let dx = Tensor::from_fn(in_dims, |s, _, i, j| g.at(s, 0, i, j) * inv);
            vec![Some(dx)]
        })
    }

    /// Spatial average per channel, `[N, C, 1, 1]`.
    pub fn global_avg_pool(&self) -> Var<'t> {
        let x = self.value();
        let in_dims = x.dims();
        let [n, c, _, _] = in_dims;
        let inv = 1.0 / x.plane() as f64;
        let out = Tensor::from_fn([n, c, 1, 1], |s, ch, _, _| {
            x.plane_slice(s, ch).iter().sum::<f64>() * inv
        });
        self.tape().op(&[*self], out, move |g| {
            let dx = Tensor::from_fn(in_dims, |s, ch, _, _| g.at(s, ch, 0, 0) * inv);
            vec![Some(dx)]
        })
    }

    /// Spatial maximum per channel, `[N, C, 1, 1]`.
    pub fn global_max_pool(&self) -> Var<'t> {
        let x = self.value();
        let in_dims = x.dims();
        let [n, c, _, _] = in_dims;
        let mut arg = vec![0usize; n * c];
        let out = Tensor::from_fn([n, c, 1, 1], |s, ch, _, _| {
            let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
            for (p, &v) in x.plane_slice(s, ch).iter().enumerate() {
                if v > best {
                    best = v;
                    bi = p;
                }
            }
            arg[s * c + ch] = bi;
            best
        });
        self.tape().op(&[*self], out, move |g| {
            let mut dx = Tensor::zeros(in_dims);
            for s in 0..n {
                for ch in 0..c {
                    dx.plane_slice_mut(s, ch)[arg[s * c + ch]] += g.at(s, ch, 0, 0);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&self, other: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let [n, ca, h, w] = a.dims();
        let [nb, cb, hb, wb] = b.dims();
        assert_eq!((n, h, w), (nb, hb, wb), "concat_channels: batch/spatial mismatch");
        let out = Tensor::from_fn([n, ca + cb, h, w], |s, ch, i, j| {
            if ch < ca {
                a.at(s, ch, i, j)
            } else {
                b.at(s, ch - ca, i, j)
            }
        });
        self.tape().op(&[*self, *other], out, move |g| {
            let ga = Tensor::from_fn([n, ca, h, w], |s, ch, i, j| g.at(s, ch, i, j));
            let gb = Tensor::from_fn([n, cb, h, w], |s, ch, i, j| g.at(s, ca + ch, i, j));
            vec![Some(ga), Some(gb)]
        })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Var<'t> {
        let in_dims = self.dims();
        let out = Tensor::scalar(self.value().sum());
        self.tape()
            .op(&[*self], out, move |g| vec![Some(Tensor::full(in_dims, g.item()))])
    }

    /// Mean of all elements as a scalar.
    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Batch normalization using the statistics of the current batch.
    ///
    /// Returns the normalized output together with the biased batch mean and
    /// variance, so the caller can maintain running estimates.
    pub fn batch_norm_train(
        &self,
        gamma: &Var<'t>,
        beta: &Var<'t>,
    ) -> (Var<'t>, Vec<f64>, Vec<f64>) {
        let (x, gm, bt) = (self.value(), gamma.value(), beta.value());
        let [n, c, _, _] = x.dims();
        let (mean, var) = kernels::channel_moments(&x);
        let zero = Tensor::zeros([1, c, 1, 1]);
        let one = Tensor::ones([1, c, 1, 1]);
        let xhat = Rc::new(kernels::normalize_channels(&x, &mean, &var, &one, &zero, BN_EPS));
        let out = Tensor::from_fn(x.dims(), |s, ch, i, j| {
            gm.data()[ch] * xhat.at(s, ch, i, j) + bt.data()[ch]
        });
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let m = (n * x.plane()) as f64;
        let saved = Rc::clone(&xhat);
        let y = self.tape().op(&[*self, *gamma, *beta], out, move |g| {
            let mut dx = Tensor::zeros(g.dims());
            let mut dgamma = Tensor::zeros([1, c, 1, 1]);
            let mut dbeta = Tensor::zeros([1, c, 1, 1]);
            for ch in 0..c {
                let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                for s in 0..n {
                    for (gv, xv) in g.plane_slice(s, ch).iter().zip(saved.plane_slice(s, ch)) {
                        sum_g += gv;
                        sum_gx += gv * xv;
                    }
                }
                dbeta.data_mut()[ch] = sum_g;
                dgamma.data_mut()[ch] = sum_gx;
                let k = gm.data()[ch] * inv_std[ch] / m;
                for s in 0..n {
                    let gp = g.plane_slice(s, ch).to_vec();
                    let xp = saved.plane_slice(s, ch).to_vec();
                    for ((d, gv), xv) in dx.plane_slice_mut(s, ch).iter_mut().zip(gp).zip(xp) {
                        *d = k * (m * gv - sum_g - xv * sum_gx);
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        });
        (y, mean, var)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Var<'t>,
        beta: &Var<'t>,
        mean: &[f64],
        var: &[f64],
    ) -> Var<'t> {
        let (x, gm) = (self.value(), gamma.value());
        let c = x.channels();
        let zero = Tensor::zeros([1, c, 1, 1]);
        let one = Tensor::ones([1, c, 1, 1]);
        let xhat = kernels::normalize_channels(&x, mean, var, &one, &zero, BN_EPS);
        let out = kernels::normalize_channels(&x, mean, var, &gm, &beta.value(), BN_EPS);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        self.tape().op(&[*self, *gamma, *beta], out, move |g| {
            let n = g.batch();
            let dx = Tensor::from_fn(g.dims(), |s, ch, i, j| {
                g.at(s, ch, i, j) * gm.data()[ch] * inv_std[ch]
            });
            let mut dgamma = Tensor::zeros([1, c, 1, 1]);
            let mut dbeta = Tensor::zeros([1, c, 1, 1]);
            for ch in 0..c {
                for s in 0..n {
                    for (gv, xv) in g.plane_slice(s, ch).iter().zip(xhat.plane_slice(s, ch)) {
                        dbeta.data_mut()[ch] += gv;
                        dgamma.data_mut()[ch] += gv * xv;
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        })
    }
}
