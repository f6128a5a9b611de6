//! Central finite-difference gradient checking.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Comparison between analytic and numerical gradients for one input.
#[derive(Clone, Debug)]
pub struct GradComparison {
    pub analytic: Tensor,
    pub numeric: Tensor,
}

impl GradComparison {
    /// Worst value of `|a − n| / max(|a|, |n|, floor)` over all elements.
    pub fn max_rel_error(&self, floor: f64) -> f64 {
        self.analytic
            .data()
            .iter()
            .zip(self.numeric.data())
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    /// True when every element satisfies `|a − n| ≤ atol + rtol·max(|a|, |n|)`.
    pub fn within(&self, rtol: f64, atol: f64) -> bool {
        self.analytic
            .data()
            .iter()
            .zip(self.numeric.data())
            .all(|(a, n)| (a - n).abs() <= atol + rtol * a.abs().max(n.abs()))
    }
}

/// Gradients of the scalar `f(inputs)` with respect to each input, both from
/// the tape and from central differences with step `eps`.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, f: F) -> Vec<GradComparison>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let eval = |values: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&tape, &vars);
        out.value().item()
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&tape, &vars);
    assert_eq!(out.value().len(), 1, "gradient check needs a scalar output");
    let grads = tape.backward(out);

    let mut work: Vec<Tensor> = inputs.to_vec();
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let analytic = grads
                .wrt(vars[i])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.dims()));
            let mut numeric = Tensor::zeros(input.dims());
            for k in 0..input.len() {
                let orig = input.data()[k];
                work[i].data_mut()[k] = orig + eps;
                let plus = eval(&work);
                work[i].data_mut()[k] = orig - eps;
                let minus = eval(&work);
                work[i].data_mut()[k] = orig;
                numeric.data_mut()[k] = (plus - minus) / (2.0 * eps);
            }
            GradComparison { analytic, numeric }
        })
        .collect()
}
