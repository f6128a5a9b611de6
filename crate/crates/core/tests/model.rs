mod common;

use common::{random, tiny_model};
use lrnet::encoder::DOWNSAMPLE;
use lrnet::layers::Ctx;
use lrnet::{Error, LrNet, ModelConfig};
use lrnet_tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DESK_FULL_PARAMS: usize = 815_700;
const DESK_BASE_PARAMS: usize = 641_293;
const PAPER_FULL_PARAMS: usize = 51_765_676;
const PAPER_BASE_PARAMS: usize = 40_765_069;

fn inputs(n: usize, size: usize, rng: &mut ChaCha8Rng) -> (Tensor, Tensor, Tensor) {
    let a = random([n, 3, size, size], 0.0, 1.0, rng);
    let b = random([n, 3, size, size], 0.0, 1.0, rng);
    let d = a.zip_map(&b, |x, y| (x - y).abs());
    (a, b, d)
}

#[test]
fn golden_parameter_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let count = |cfg: ModelConfig, rng: &mut ChaCha8Rng| LrNet::new(&cfg, rng).unwrap().parameter_count();
    assert_eq!(count(ModelConfig::desk(), &mut rng), DESK_FULL_PARAMS);
    assert_eq!(count(ModelConfig::desk().base(), &mut rng), DESK_BASE_PARAMS);
    assert_eq!(count(ModelConfig::vgg16(), &mut rng), PAPER_FULL_PARAMS);
    assert_eq!(count(ModelConfig::vgg16().base(), &mut rng), PAPER_BASE_PARAMS);
    // Within 7 % of the reference 48.71 M.
    assert!((PAPER_FULL_PARAMS as f64 / 48.71e6 - 1.0).abs() < 0.07);
}

#[test]
fn lop_toggle_removes_pooling_parameters_and_keeps_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let on = LrNet::new(&tiny_model(), &mut rng).unwrap();
    let off = LrNet::new(&ModelConfig { lop: false, ..tiny_model() }, &mut rng).unwrap();
    let lop_params: usize = on
        .params
        .iter()
        .filter(|(_, e)| e.name.starts_with("lop"))
        .map(|(_, e)| e.value.len())
        .sum();
    let w = tiny_model().widths;
    assert_eq!(lop_params, (0..4).map(|i| 5 * w[i]).sum::<usize>());
    assert!(off.params.iter().all(|(_, e)| !e.name.starts_with("lop")));
    assert_eq!(on.parameter_count() - off.parameter_count(), lop_params);

    let (a, b, d) = inputs(1, 32, &mut rng);
    let tape = Tape::new();
    let f_on = on.forward(&Ctx::eval(&tape, &on.params), &a, &b, &d).unwrap();
    let f_off = off.forward(&Ctx::eval(&tape, &off.params), &a, &b, &d).unwrap();
    for (x, y) in f_on.trace.iter().zip(&f_off.trace) {
        assert_eq!((x.b1, x.bd), (y.b1, y.bd));
    }
    assert_eq!(f_on.prob.dims(), f_off.prob.dims());
}

#[test]
fn e2a_toggle_and_base_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = LrNet::new(&tiny_model().base(), &mut rng).unwrap();
    assert!(base.e2a.is_none() && base.encoder.c2a.is_empty() && base.encoder.lops.is_empty());
    assert!(base.params.iter().all(|(_, e)| !e.name.starts_with("e2a") && !e.name.starts_with("c2a")));
    let (a, b, d) = inputs(2, 32, &mut rng);
    let tape = Tape::new();
    let f = base.forward(&Ctx::eval(&tape, &base.params), &a, &b, &d).unwrap();
    assert!(f.deep_prob.is_none() && f.finals.is_empty());
    assert_eq!(f.prob.dims(), [2, 1, 32, 32]);
}

#[test]
fn hca_without_c2a_is_rejected() {
    let cfg = ModelConfig { c2a: false, ..tiny_model() };
    assert!(matches!(LrNet::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Config(_))));
}

#[test]
fn shape_law_and_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = LrNet::new(&tiny_model(), &mut rng).unwrap();
    let w = tiny_model().widths;
    for size in [32, 48, 64] {
        let (a, b, d) = inputs(2, size, &mut rng);
        let tape = Tape::new();
        let cx = Ctx::train(&tape, &model.params);
        let f = model.forward(&cx, &a, &b, &d).unwrap();
        for (y, t) in f.trace.iter().enumerate() {
            let s = size >> y;
            assert_eq!(t.b1, [2, w[y], s, s]);
            assert_eq!(t.b2, t.b1);
            assert_eq!(t.bd, t.b1);
            let alpha = t.alpha.as_ref().unwrap();
            assert!(alpha.data().iter().all(|v| (0.0..=2.0).contains(v)));
        }
        for (y, m) in f.finals.iter().enumerate() {
            assert_eq!(m.dims(), [2, 1, size >> y, size >> y]);
            assert!(m.data().iter().all(|v| (0.0..=2.0).contains(v)));
        }
        assert!(f.prob.value().data().iter().all(|v| (0.0..=1.0).contains(v)));
        let deep = f.deep_prob.unwrap();
        assert_eq!(deep.dims(), [2, 1, size / DOWNSAMPLE, size / DOWNSAMPLE]);
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = LrNet::new(&tiny_model(), &mut rng).unwrap();
    let tape = Tape::new();
    let cx = Ctx::eval(&tape, &model.params);
    let (a, b, d) = inputs(1, 24, &mut rng);
    assert!(matches!(model.forward(&cx, &a, &b, &d), Err(Error::InvalidInput(_))));
    let (a, _, d) = inputs(1, 32, &mut rng);
    let (b, _, _) = inputs(1, 48, &mut rng);
    assert!(matches!(model.forward(&cx, &a, &b, &d), Err(Error::Shape(_))));
}

#[test]
fn eval_mode_is_batch_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = LrNet::new(&tiny_model(), &mut rng).unwrap();
    let (a, b, d) = inputs(2, 32, &mut rng);
    let tape = Tape::new();
    let cx = Ctx::eval(&tape, &model.params);
    let both = model.forward(&cx, &a, &b, &d).unwrap().prob.value().item_at(1);
    let single = model
        .forward(&cx, &a.item_at(1), &b.item_at(1), &d.item_at(1))
        .unwrap()
        .prob
        .value()
        .item_at(0);
    assert!(both.max_abs_diff(&single) < 1e-12);
}
