//! Parameterised building blocks and the forward-pass context.

use std::cell::RefCell;

use lrnet_tensor::init::he_normal;
use lrnet_tensor::{Binder, ParamId, Params, Tape, Tensor, Var};
use rand::Rng;

/// Running-statistics momentum for batch norm.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are queued for update.
    Train,
    /// Running statistics.
    Eval,
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug)]
pub struct BnObservation {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Everything a forward pass needs besides its inputs.
pub struct Ctx<'t, 'p> {
    binder: Binder<'t, 'p>,
    mode: Mode,
    observations: RefCell<Vec<BnObservation>>,
}

impl<'t, 'p> Ctx<'t, 'p> {
    /// Training context: trainable parameters become differentiable leaves.
    pub fn train(tape: &'t Tape, params: &'p Params) -> Self {
        Self {
            binder: Binder::new(tape, params),
            mode: Mode::Train,
            observations: RefCell::default(),
        }
    }

    /// Inference context: parameters are constants, running statistics used.
    pub fn eval(tape: &'t Tape, params: &'p Params) -> Self {
        Self {
            binder: Binder::frozen(tape, params),
            mode: Mode::Eval,
            observations: RefCell::default(),
        }
    }

    /// Evaluation-mode statistics with differentiable parameters, for
    /// gradient checks of deterministic sub-networks.
    pub fn eval_with_grad(tape: &'t Tape, params: &'p Params) -> Self {
        Self {
            binder: Binder::new(tape, params),
            mode: Mode::Eval,
            observations: RefCell::default(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn tape(&self) -> &'t Tape {
        self.binder.tape()
    }

    pub fn params(&self) -> &'p Params {
        self.binder.params()
    }

    pub fn binder(&self) -> &Binder<'t, 'p> {
        &self.binder
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.binder.var(id)
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape().constant(t)
    }

    pub fn take_observations(&self) -> Vec<BnObservation> {
        std::mem::take(&mut self.observations.borrow_mut())
    }
}

/// Folds observed batch statistics into the running estimates.
pub fn apply_bn_observations(params: &mut Params, observations: &[BnObservation]) {
    for ob in observations {
        let unbias = if ob.count > 1 {
            ob.count as f64 / (ob.count - 1) as f64
        } else {
            1.0
        };
        let rm = params.get_mut(ob.running_mean);
        for (r, m) in rm.data_mut().iter_mut().zip(&ob.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = params.get_mut(ob.running_var);
        for (r, v) in rv.data_mut().iter_mut().zip(&ob.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
    }
}

/// Stride-1 square convolution.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-initialised weights, zero bias. Padding keeps the spatial size.
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = params.add(
            &format!("{name}.weight"),
            he_normal([out_channels, in_channels, kernel, kernel], fan_in, rng),
        );
        let bias = bias.then(|| {
            params.add(&format!("{name}.bias"), Tensor::zeros([1, out_channels, 1, 1]))
        });
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            pad: kernel / 2,
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        let w = cx.var(self.weight);
        let b = self.bias.map(|id| cx.var(id));
        x.conv2d(&w, b.as_ref(), self.pad)
    }
}

/// Batch normalisation with learnable affine parameters.
///
/// Two layers may share `gamma`/`beta` while tracking separate running
/// statistics (see [`BatchNorm::sharing`]).
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(params: &mut Params, name: &str, channels: usize) -> Self {
        let gamma = params.add(&format!("{name}.weight"), Tensor::ones([1, channels, 1, 1]));
        let beta = params.add(&format!("{name}.bias"), Tensor::zeros([1, channels, 1, 1]));
        Self::with_affine(params, name, gamma, beta, channels)
    }

    /// Shares the affine parameters of `other`, with fresh running statistics.
    pub fn sharing(other: &BatchNorm, params: &mut Params, name: &str) -> Self {
        let channels = params.get(other.gamma).channels();
        Self::with_affine(params, name, other.gamma, other.beta, channels)
    }

    fn with_affine(
        params: &mut Params,
        name: &str,
        gamma: ParamId,
        beta: ParamId,
        channels: usize,
    ) -> Self {
        let running_mean = params.add_buffer(
            &format!("{name}.running_mean"),
            Tensor::zeros([1, channels, 1, 1]),
        );
        let running_var =
            params.add_buffer(&format!("{name}.running_var"), Tensor::ones([1, channels, 1, 1]));
        Self {
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        let (g, b) = (cx.var(self.gamma), cx.var(self.beta));
        match cx.mode() {
            Mode::Train => {
                let count = x.dims()[0] * x.dims()[2] * x.dims()[3];
                let (y, mean, var) = x.batch_norm_train(&g, &b);
                cx.observations.borrow_mut().push(BnObservation {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    mean,
                    var,
                    count,
                });
                y
            }
            Mode::Eval => {
                let params = cx.params();
                x.batch_norm_eval(
                    &g,
                    &b,
                    params.get(self.running_mean).data(),
                    params.get(self.running_var).data(),
                )
            }
        }
    }
}

/// 3×3 convolution, batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        name: &str,
        conv_name: &str,
        bn_name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let conv = Conv2d::new(
            params,
            &format!("{name}.{conv_name}"),
            in_channels,
            out_channels,
            3,
            true,
            rng,
        );
        let bn = BatchNorm::new(params, &format!("{name}.{bn_name}"), out_channels);
        Self { conv, bn }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        self.bn.forward(cx, self.conv.forward(cx, x)).relu()
    }
}
