mod common;

use common::tiny_train;
use lrnet::checkpoint::Checkpoint;
use lrnet::data::{split_dataset, synth_generate, synth_samples, Split, SplitSpec, SynthConfig};
use lrnet::train::{ablate, evaluate, evaluate_model, parse_variant, table4_csv, table5_csv, table5_variants, Trainer};
use lrnet::{Error, LossMode};

fn pairs(n: usize, seed: u64) -> Vec<lrnet::data::Sample> {
    synth_samples(&SynthConfig {
        pairs: n,
        tile_size: 32,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn identical_runs_identical_logs() {
    let s = pairs(4, 0);
    let run = || {
        let mut t = Trainer::new(tiny_train(2)).unwrap();
        t.fit(&s, &s[..2]).unwrap();
        t.log.iter().map(|e| (e.loss, e.final_loss, e.deep_loss, e.val_f1)).collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a.len(), 2);
    assert_eq!(a, run());
    let mut other = tiny_train(2);
    other.seed = 1;
    let mut t = Trainer::new(other).unwrap();
    t.fit(&s, &[]).unwrap();
    assert_ne!(t.log[0].loss, a[0].0);
}

#[test]
fn checkpoint_round_trip_evaluates_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = SynthConfig {
        pairs: 6,
        tile_size: 32,
        ..SynthConfig::default()
    };
    let m = split_dataset(&synth_generate(&cfg, &data).unwrap(), SplitSpec::Counts([4, 1, 1]), 0).unwrap();
    let manifest = m.save(None).unwrap();
    let mut tc = tiny_train(2);
    tc.manifest = Some(manifest);
    tc.checkpoint_dir = Some(dir.path().join("ck"));
    let trainer = lrnet::train::train(tc).unwrap();
    let samples = lrnet::data::load_split(&m, Split::Test).unwrap();
    let before = evaluate_model(&trainer.model, &samples, trainer.config.normalize, 2).unwrap();
    let ck = Checkpoint::load(&dir.path().join("ck/last.ckpt")).unwrap();
    assert_eq!(ck.epoch, 2);
    let after = evaluate(&ck, None, Split::Test).unwrap();
    assert_eq!(before, after);
    assert!(dir.path().join("ck/best.ckpt").is_file());
    assert!(dir.path().join("ck/train_log.json").is_file());
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_train(1);
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    let mut t = Trainer::new(cfg).unwrap();
    let id = t.model.params.id("head.weight").unwrap();
    t.model.params.get_mut(id).data_mut()[0] = f64::NAN;
    match t.fit(&pairs(2, 0), &[]) {
        Err(Error::NonFiniteLoss { epoch, detail, .. }) => {
            assert_eq!(epoch, 1);
            assert!(detail.contains("head.weight"));
        }
        other => panic!("expected a non-finite loss error, got {other:?}", other = other.err()),
    }
    assert!(dir.path().join("nonfinite_dump.ckpt").is_file());
}

#[test]
fn training_f1_target_stops_early() {
    let s = pairs(2, 0);
    let mut cfg = tiny_train(5);
    cfg.stop_at_train_f1 = Some(0.0);
    cfg.train_eval_every = 2;
    let mut t = Trainer::new(cfg).unwrap();
    assert_eq!(t.fit(&s, &[]).unwrap(), lrnet::train::StopReason::TargetReached);
    assert_eq!(t.epoch(), 2);
}

#[test]
fn ablation_rows_are_deterministic_and_shaped() {
    let train = pairs(2, 0);
    let eval = pairs(2, 1);
    let base = tiny_train(1);
    let v = parse_variant("base+LOP", &base).unwrap();
    let bad = parse_variant("base+HCA", &base).unwrap();
    let report = ablate(&[v.clone(), bad, v], &train, &eval).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rejected.len(), 1);
    assert_eq!(report.rows[0].metrics, report.rows[1].metrics);
    assert_eq!(report.rows[0].final_loss, report.rows[1].final_loss);
    let csv = table4_csv(&report.rows);
    assert!(csv.starts_with("variant,params,OA,F1,IOU,F1_Edge,IOU_Edge"));
    assert_eq!(csv.lines().count(), 3);

    let losses = ablate(&table5_variants(&base), &train, &eval).unwrap();
    let modes: Vec<LossMode> = losses.rows.iter().map(|r| r.loss_mode).collect();
    assert_eq!(modes, [LossMode::Bce, LossMode::Iou, LossMode::BceIou]);
    assert_eq!(table5_csv(&losses.rows).lines().count(), 4);
}
