//! Training, evaluation, inference and the ablation harness.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{Rgb, RgbImage};
use lrnet_tensor::{Adam, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{load_backbone, read_archive};
use crate::checkpoint::Checkpoint;
use crate::config::{LossMode, ModelConfig, NormalizeMode, TrainConfig};
use crate::data::{load_split, make_batch, Batch, DatasetManifest, Sample, Split};
use crate::error::{Error, Result};
use crate::layers::{apply_bn_observations, Ctx};
use crate::loss::{combined_loss, e2a_supervise};
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::model::LrNet;
use crate::raster::{
    binarize, boundary_extract, save_attention_png, BinaryMask, ImageTile, ProbabilityMap,
    DEFAULT_THRESHOLD,
};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Loss values of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    /// Final-output loss plus the weighted deep loss.
    pub total: f64,
    pub final_output: f64,
    pub deep: Option<f64>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: f64,
    pub final_loss: f64,
    pub deep_loss: Option<f64>,
    pub val_f1: Option<f64>,
    pub train_f1: Option<f64>,
    pub seconds: f64,
}

/// Why [`Trainer::fit`] returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EpochsDone,
    TargetReached,
}

/// Owns the model, optimizer and random stream of one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: LrNet,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    pub log: Vec<EpochLog>,
    best_val_f1: Option<f64>,
}

impl Trainer {
    /// Fresh model initialised from `config.seed`, with backbone weights if
    /// configured.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = LrNet::new(&config.model, &mut rng)?;
        if let Some(path) = &config.pretrained {
            let report = load_backbone(&mut model, &read_archive(path)?, config.pretrained_diff_branch)?;
            log::info!(
                "backbone: {} tensors loaded, {} missing, {} unmatched",
                report.loaded.len(),
                report.missing.len(),
                report.unmatched.len()
            );
        }
        Ok(Self {
            adam: Adam::new(config.lr),
            config,
            model,
            rng,
            epoch: 0,
            log: Vec::new(),
            best_val_f1: None,
        })
    }

    /// Continues a run exactly where the checkpoint left it.
    pub fn resume(ck: &Checkpoint) -> Result<Self> {
        let model = ck.restore_model()?;
        let adam = ck.restore_adam(&model)?;
        Ok(Self {
            config: ck.config.clone(),
            model,
            adam,
            rng: ck.rng.restore(),
            epoch: ck.epoch,
            log: Vec::new(),
            best_val_f1: ck.best_val_f1,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, self.epoch, &self.model, &self.adam, &self.rng, self.best_val_f1)
    }

    /// One Adam step on one batch; batch-norm running statistics are updated
    /// afterwards.
    pub fn step(&mut self, batch: &Batch) -> Result<StepLoss> {
        let mode = self.config.loss_mode;
        let tape = Tape::new();
        let cx = Ctx::train(&tape, &self.model.params);
        let fwd = self.model.forward(&cx, &batch.t1, &batch.t2, &batch.diff)?;
        let fin = combined_loss(&fwd.prob, &batch.label, mode)?;
        let mut total = fin.total;
        let mut deep = None;
        if let Some(dp) = fwd.deep_prob {
            let d = e2a_supervise(&dp, &batch.label, mode)?;
            deep = Some(d.total.value().item());
            total = total.add(&d.total.scale(self.config.deep_loss_weight));
        }
        let loss = StepLoss {
            total: total.value().item(),
            final_output: fin.total.value().item(),
            deep,
        };
        if !loss.total.is_finite() {
            return Err(self.non_finite(loss));
        }
        let grads = tape.backward(total);
        let grads = cx.binder().collect(&grads);
        let observations = cx.take_observations();
        drop(cx);
        self.adam.update(&mut self.model.params, &grads);
        apply_bn_observations(&mut self.model.params, &observations);
        Ok(loss)
    }

    fn non_finite(&self, loss: StepLoss) -> Error {
        let bad: Vec<&str> = self
            .model
            .params
            .iter()
            .filter(|(_, e)| !e.value.all_finite())
            .map(|(_, e)| e.name.as_str())
            .collect();
        let mut detail = format!("loss {loss:?}; non-finite parameters: {bad:?}");
        if let Some(dir) = &self.config.checkpoint_dir {
            let path = dir.join("nonfinite_dump.ckpt");
            match self.checkpoint().save(&path) {
                Ok(()) => detail.push_str(&format!("; state dumped to {}", path.display())),
                Err(e) => detail.push_str(&format!("; dump failed: {e}")),
            }
        }
        Error::NonFiniteLoss {
            epoch: self.epoch + 1,
            batch: 0,
            detail,
        }
    }

    /// One pass over `samples` in a freshly shuffled order.
    pub fn train_epoch(&mut self, samples: &[Sample]) -> Result<EpochLog> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("no training samples".into()));
        }
        let start = Instant::now();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut sum, mut fin, mut deep, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let items: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = make_batch(&items, self.config.normalize)?;
            let loss = self.step(&batch).map_err(|e| match e {
                Error::NonFiniteLoss { epoch, detail, .. } => Error::NonFiniteLoss { epoch, batch: b, detail },
                other => other,
            })?;
            sum += loss.total;
            fin += loss.final_output;
            deep += loss.deep.unwrap_or(0.0);
            batches += 1;
        }
        self.epoch += 1;
        let n = batches as f64;
        Ok(EpochLog {
            epoch: self.epoch,
            loss: sum / n,
            final_loss: fin / n,
            deep_loss: self.model.e2a.as_ref().map(|_| deep / n),
            val_f1: None,
            train_f1: None,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `config.epochs` epochs are complete (or the optional
    /// training-F1 target is met), tracking validation F1 and writing
    /// `best.ckpt`/`last.ckpt` when a checkpoint directory is configured.
    pub fn fit(&mut self, train: &[Sample], val: &[Sample]) -> Result<StopReason> {
        if self.epoch == 0 {
            log::info!(
                "training {} ({} parameters), constant lr {}, {} epochs; model selection by val F1",
                self.model.config.variant_name(),
                self.model.parameter_count(),
                self.config.lr,
                self.config.epochs
            );
        }
        while self.epoch < self.config.epochs {
            let mut entry = self.train_epoch(train)?;
            if !val.is_empty() {
                let f1 = evaluate_model(&self.model, val, self.config.normalize, self.config.batch_size)?.f1;
                entry.val_f1 = Some(f1);
                if self.best_val_f1.is_none_or(|b| f1 > b) {
                    self.best_val_f1 = Some(f1);
                    self.save_checkpoint(BEST_CHECKPOINT)?;
                }
            }
            let target = self.config.stop_at_train_f1;
            if target.is_some() && self.epoch % self.config.train_eval_every == 0 {
                entry.train_f1 =
                    Some(evaluate_model(&self.model, train, self.config.normalize, self.config.batch_size)?.f1);
            }
            log::info!(
                "epoch {:>4}  loss {:.5}  final {:.5}  val_f1 {}  ({:.1}s)",
                entry.epoch,
                entry.loss,
                entry.final_loss,
                entry.val_f1.map_or_else(|| "-".into(), |f| format!("{f:.2}")),
                entry.seconds
            );
            let reached = matches!((entry.train_f1, target), (Some(f), Some(t)) if f >= t);
            self.log.push(entry);
            self.save_checkpoint(LAST_CHECKPOINT)?;
            if reached {
                log::info!("training F1 target reached at epoch {}", self.epoch);
                return Ok(StopReason::TargetReached);
            }
        }
        Ok(StopReason::EpochsDone)
    }

    fn save_checkpoint(&self, file: &str) -> Result<()> {
        match &self.config.checkpoint_dir {
            Some(dir) => self.checkpoint().save(&dir.join(file)),
            None => Ok(()),
        }
    }
}

/// Loads the train and val splits named by the config's manifest and trains.
pub fn train(config: TrainConfig) -> Result<Trainer> {
    let path = config
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("training needs a manifest".into()))?;
    let manifest = DatasetManifest::load(&path)?;
    let train_set = load_split(&manifest, Split::Train)?;
    let val_set = load_split(&manifest, Split::Val)?;
    let mut trainer = Trainer::new(config)?;
    trainer.fit(&train_set, &val_set)?;
    if let Some(dir) = &trainer.config.checkpoint_dir {
        let path = dir.join("train_log.json");
        fs::write(&path, serde_json::to_string_pretty(&trainer.log)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(trainer)
}

/// Inference-mode outputs for a batch.
pub struct BatchPrediction {
    /// `[N, 1, H, W]`.
    pub prob: Tensor,
    pub deep: Option<Tensor>,
    pub finals: Vec<Tensor>,
    pub block_norms: Vec<f64>,
}

pub fn predict_batch(model: &LrNet, batch: &Batch) -> Result<BatchPrediction> {
    let tape = Tape::new();
    let cx = Ctx::eval(&tape, &model.params);
    let f = model.forward(&cx, &batch.t1, &batch.t2, &batch.diff)?;
    Ok(BatchPrediction {
        prob: (*f.prob.value()).clone(),
        deep: f.deep_prob.map(|d| (*d.value()).clone()),
        finals: f.finals,
        block_norms: f.block_norms,
    })
}

/// Pooled area and edge metrics of `predictor`'s masks over `samples`.
pub fn evaluate_with(
    samples: &[Sample],
    batch_size: usize,
    mut predictor: impl FnMut(&[&Sample]) -> Result<Vec<BinaryMask>>,
) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::default();
    let refs: Vec<&Sample> = samples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let masks = predictor(chunk)?;
        if masks.len() != chunk.len() {
            return Err(Error::Internal("predictor returned wrong number of masks".into()));
        }
        for (m, s) in masks.iter().zip(chunk) {
            acc.add(m, &s.label)?;
        }
    }
    Ok(acc.report())
}

/// Thresholded model predictions for a batch of samples.
pub fn predict_masks(model: &LrNet, samples: &[&Sample], normalize: NormalizeMode) -> Result<Vec<BinaryMask>> {
    let p = predict_batch(model, &make_batch(samples, normalize)?)?;
    (0..samples.len())
        .map(|i| binarize(&ProbabilityMap::from_tensor(&p.prob, i)?, DEFAULT_THRESHOLD))
        .collect()
}

pub fn evaluate_model(model: &LrNet, samples: &[Sample], normalize: NormalizeMode, batch_size: usize) -> Result<MetricReport> {
    evaluate_with(samples, batch_size, |chunk| predict_masks(model, chunk, normalize))
}

/// Evaluates a checkpoint on one split of `manifest` (or of the manifest
/// recorded in the checkpoint's configuration).
pub fn evaluate(ckpt: &Checkpoint, manifest: Option<&DatasetManifest>, split: Split) -> Result<MetricReport> {
    let owned;
    let manifest = match manifest {
        Some(m) => m,
        None => {
            let path = ckpt
                .config
                .manifest
                .as_ref()
                .ok_or_else(|| Error::Config("no manifest given or recorded in the checkpoint".into()))?;
            owned = DatasetManifest::load(path)?;
            &owned
        }
    };
    let samples = load_split(manifest, split)?;
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("split {split:?} is empty")));
    }
    let model = ckpt.restore_model()?;
    evaluate_model(&model, &samples, ckpt.config.normalize, ckpt.config.batch_size)
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(report: &MetricReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))?;
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok((json, csv))
}

/// Zero-pads a tile on the bottom/right to a multiple of `m`.
pub fn pad_to_multiple(tile: &ImageTile, m: usize) -> ImageTile {
    let (h, w) = (tile.height().div_ceil(m) * m, tile.width().div_ceil(m) * m);
    if (h, w) == (tile.height(), tile.width()) {
        return tile.clone();
    }
    ImageTile::from_fn(h, w, tile.channels(), |y, x, c| {
        if y < tile.height() && x < tile.width() {
            tile.get(y, x, c)
        } else {
            0.0
        }
    })
}

fn crop_prob(p: &ProbabilityMap, h: usize, w: usize) -> Result<ProbabilityMap> {
    let data = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| p.get(y, x))
        .collect();
    ProbabilityMap::new(h, w, data)
}

/// Model outputs for one image pair, cropped to the pair's size.
pub struct Prediction {
    pub prob: ProbabilityMap,
    pub deep: Option<ProbabilityMap>,
    /// Final attention maps at padded resolution, levels 1..=5.
    pub finals: Vec<Tensor>,
    pub block_norms: Vec<f64>,
}

pub fn predict_pair(model: &LrNet, normalize: NormalizeMode, t1: &ImageTile, t2: &ImageTile) -> Result<Prediction> {
    if !t1.same_shape(t2) {
        return Err(Error::Shape("T1 and T2 differ in size".into()));
    }
    let (h, w) = (t1.height(), t1.width());
    let sample = Sample {
        id: "pair".into(),
        t1: pad_to_multiple(t1, crate::encoder::DOWNSAMPLE),
        t2: pad_to_multiple(t2, crate::encoder::DOWNSAMPLE),
        label: BinaryMask::zeros(1, 1),
    };
    let padded_label = BinaryMask::zeros(sample.t1.height(), sample.t1.width());
    let sample = Sample { label: padded_label, ..sample };
    let p = predict_batch(model, &make_batch(&[&sample], normalize)?)?;
    let prob = crop_prob(&ProbabilityMap::from_tensor(&p.prob, 0)?, h, w)?;
    let deep = p.deep.as_ref().map(|d| ProbabilityMap::from_tensor(d, 0)).transpose()?;
    Ok(Prediction {
        prob,
        deep,
        finals: p.finals,
        block_norms: p.block_norms,
    })
}

pub const OVERLAY_TP: [u8; 3] = [255, 255, 255];
pub const OVERLAY_TN: [u8; 3] = [0, 0, 0];
pub const OVERLAY_FP: [u8; 3] = [0, 255, 0];
pub const OVERLAY_FN: [u8; 3] = [255, 0, 255];

/// TP white, TN black, FP green, FN purple.
pub fn overlay(pred: &BinaryMask, gt: &BinaryMask) -> Result<RgbImage> {
    if !pred.same_shape(gt) {
        return Err(Error::Shape("overlay masks differ in size".into()));
    }
    Ok(RgbImage::from_fn(pred.width() as u32, pred.height() as u32, |x, y| {
        let (p, g) = (pred.get(y as usize, x as usize), gt.get(y as usize, x as usize));
        Rgb(match (p, g) {
            (true, true) => OVERLAY_TP,
            (false, false) => OVERLAY_TN,
            (true, false) => OVERLAY_FP,
            (false, true) => OVERLAY_FN,
        })
    }))
}

#[derive(Clone, Debug, Default)]
pub struct PredictOptions {
    pub label: Option<PathBuf>,
    /// Also write attention maps, the deep probability map and block norms.
    pub debug: bool,
}

/// Paths written by [`predict_files`].
#[derive(Clone, Debug, Default)]
pub struct PredictionFiles {
    pub probability: PathBuf,
    pub mask: PathBuf,
    pub edge: PathBuf,
    pub overlay: Option<PathBuf>,
    pub debug: Vec<PathBuf>,
}

/// Runs the model on two image files and writes probability, mask, edge and
/// (with a label) overlay PNGs into `out_dir`.
pub fn predict_files(
    model: &LrNet,
    normalize: NormalizeMode,
    t1: &Path,
    t2: &Path,
    out_dir: &Path,
    opts: &PredictOptions,
) -> Result<PredictionFiles> {
    let a = ImageTile::load_png(t1)?;
    let b = ImageTile::load_png(t2)?;
    let pred = predict_pair(model, normalize, &a, &b)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mask = binarize(&pred.prob, DEFAULT_THRESHOLD)?;
    let mut files = PredictionFiles {
        probability: out_dir.join("probability.png"),
        mask: out_dir.join("mask.png"),
        edge: out_dir.join("edge.png"),
        ..PredictionFiles::default()
    };
    pred.prob.save_png(&files.probability)?;
    mask.save_png(&files.mask)?;
    boundary_extract(&mask).save_png(&files.edge)?;
    if let Some(label) = &opts.label {
        let gt = BinaryMask::load_png(label)?;
        let path = out_dir.join("overlay.png");
        overlay(&mask, &gt)?.save(&path).map_err(|e| Error::image(&path, e))?;
        files.overlay = Some(path);
    }
    if opts.debug {
        for (i, f) in pred.finals.iter().enumerate() {
            let path = out_dir.join(format!("attention_level{}.png", i + 1));
            save_attention_png(f.plane_slice(0, 0), f.height(), f.width(), &path)?;
            files.debug.push(path);
        }
        if let Some(d) = &pred.deep {
            let path = out_dir.join("deep_probability.png");
            d.save_png(&path)?;
            files.debug.push(path);
        }
        let path = out_dir.join("block_norms.json");
        fs::write(&path, serde_json::to_string(&pred.block_norms)?).map_err(|e| Error::io(&path, e))?;
        files.debug.push(path);
    }
    Ok(files)
}

/// One configuration of the ablation grid.
#[derive(Clone, Debug)]
pub struct Variant {
    pub name: String,
    pub config: TrainConfig,
}

/// Module toggles from a name such as `base+LOP+C2A`.
pub fn parse_variant(name: &str, base: &TrainConfig) -> Result<Variant> {
    let mut parts = name.split('+').map(str::trim);
    if parts.next() != Some("base") {
        return Err(Error::Config(format!("variant {name:?} must start with `base`")));
    }
    let mut cfg = base.clone();
    cfg.model = cfg.model.base();
    for p in parts {
        match p.to_ascii_uppercase().as_str() {
            "LOP" => cfg.model.lop = true,
            "C2A" => cfg.model.c2a = true,
            "HCA" => cfg.model.hca = true,
            "E2A" => cfg.model.e2a = true,
            other => return Err(Error::Config(format!("unknown module {other:?} in {name:?}"))),
        }
    }
    Ok(Variant {
        name: name.to_owned(),
        config: cfg,
    })
}

/// Module combinations of the ablation table, base model first.
pub const TABLE4_ROWS: [&str; 9] = [
    "base",
    "base+LOP",
    "base+C2A",
    "base+C2A+HCA",
    "base+E2A",
    "base+LOP+C2A+HCA",
    "base+LOP+E2A",
    "base+C2A+HCA+E2A",
    "base+LOP+C2A+HCA+E2A",
];

pub fn table4_variants(base: &TrainConfig) -> Vec<Variant> {
    TABLE4_ROWS
        .iter()
        .map(|n| parse_variant(n, base).expect("built-in variant names parse"))
        .collect()
}

/// The full model under each loss mode.
pub fn table5_variants(base: &TrainConfig) -> Vec<Variant> {
    [LossMode::Bce, LossMode::Iou, LossMode::BceIou]
        .into_iter()
        .map(|mode| {
            let mut config = base.clone();
            config.model = ModelConfig {
                lop: true,
                c2a: true,
                hca: true,
                e2a: true,
                ..config.model
            };
            config.loss_mode = mode;
            Variant {
                name: mode.to_string(),
                config,
            }
        })
        .collect()
}

/// Trained-and-evaluated ablation row.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub loss_mode: LossMode,
    pub params: usize,
    pub epochs: usize,
    /// Final-output loss per epoch.
    pub final_loss: Vec<f64>,
    pub loss: Vec<f64>,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Variants rejected before training, with the reason.
    pub rejected: Vec<(String, String)>,
}

/// Trains each variant from scratch on `train` and evaluates it on `eval`.
pub fn ablate(variants: &[Variant], train: &[Sample], eval: &[Sample]) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for v in variants {
        if let Err(e) = v.config.validate() {
            log::warn!("rejecting variant {}: {e}", v.name);
            report.rejected.push((v.name.clone(), e.to_string()));
            continue;
        }
        log::info!("ablation variant {}", v.name);
        let mut t = Trainer::new(v.config.clone())?;
        t.fit(train, &[])?;
        let metrics = evaluate_model(&t.model, eval, v.config.normalize, v.config.batch_size)?;
        report.rows.push(AblationRow {
            name: v.name.clone(),
            loss_mode: v.config.loss_mode,
            params: t.model.parameter_count(),
            epochs: t.epoch(),
            final_loss: t.log.iter().map(|e| e.final_loss).collect(),
            loss: t.log.iter().map(|e| e.loss).collect(),
            metrics,
        });
    }
    Ok(report)
}

/// Rows × `OA, F1, IOU, F1_Edge, IOU_Edge`, plus parameters and final loss.
pub fn table4_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,params,OA,F1,IOU,F1_Edge,IOU_Edge,final_loss\n");
    for r in rows {
        let m = &r.metrics;
        s.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.6}\n",
            r.name,
            r.params,
            m.oa,
            m.f1,
            m.iou,
            m.f1_edge,
            m.iou_edge,
            r.final_loss.last().copied().unwrap_or(f64::NAN)
        ));
    }
    s
}

/// Loss modes × area and edge metrics.
pub fn table5_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("loss,params,OA,Pre,Rec,F1,IOU,Pre_Edge,Rec_Edge,F1_Edge,IOU_Edge\n");
    for r in rows {
        let m = &r.metrics;
        s.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.loss_mode, r.params, m.oa, m.pre, m.rec, m.f1, m.iou, m.pre_edge, m.rec_edge, m.f1_edge, m.iou_edge
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_samples, SynthConfig};
    use crate::metrics::{area_metrics, confusion_counts};

    fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::desk();
        cfg.model = cfg.model.with_widths([2, 2, 4, 4, 4]);
        cfg.epochs = 2;
        cfg.batch_size = 2;
        cfg
    }

    fn samples(n: usize, size: usize) -> Vec<Sample> {
        synth_samples(&SynthConfig {
            pairs: n,
            tile_size: size,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn variant_grid_shapes() {
        let base = TrainConfig::desk();
        let t4 = table4_variants(&base);
        assert_eq!(t4.len(), 9);
        assert_eq!(t4[0].config.model, base.model.clone().base());
        assert!(t4.iter().all(|v| v.config.validate().is_ok()));
        assert_eq!(t4.iter().map(|v| v.config.model.variant_name()).collect::<Vec<_>>(), TABLE4_ROWS);
        assert_eq!(table5_variants(&base).len(), 3);
        assert!(parse_variant("base+HCA", &base).unwrap().config.validate().is_err());
        assert!(parse_variant("full", &base).is_err());
    }

    #[test]
    fn oracle_and_empty_predictors() {
        let s = samples(3, 32);
        let perfect = evaluate_with(&s, 2, |c| Ok(c.iter().map(|x| x.label.clone()).collect())).unwrap();
        assert_eq!((perfect.oa, perfect.f1, perfect.iou, perfect.f1_edge), (100.0, 100.0, 100.0, 100.0));
        let empty = evaluate_with(&s, 2, |c| Ok(c.iter().map(|_| BinaryMask::zeros(32, 32)).collect())).unwrap();
        let tn = empty.area_counts.tn as f64;
        assert_eq!(empty.rec, 0.0);
        assert!((empty.oa - 100.0 * tn / empty.area_counts.total() as f64).abs() < 1e-12);
    }

    #[test]
    fn stub_predictions_match_hand_counts() {
        let s = samples(1, 32);
        let stub = BinaryMask::from_fn(32, 32, |y, _| y < 8);
        let r = evaluate_with(&s, 1, |_| Ok(vec![stub.clone()])).unwrap();
        let expect = area_metrics(&confusion_counts(&stub, &s[0].label).unwrap());
        assert_eq!((r.pre, r.rec, r.f1, r.iou, r.oa), (expect.pre, expect.rec, expect.f1, expect.iou, expect.oa));
    }

    #[test]
    fn overlay_colours() {
        let gt = BinaryMask::from_fn(2, 2, |y, _| y == 0);
        let pred = BinaryMask::from_fn(2, 2, |_, x| x == 0);
        let img = overlay(&pred, &gt).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, OVERLAY_TP);
        assert_eq!(img.get_pixel(1, 0).0, OVERLAY_FN);
        assert_eq!(img.get_pixel(0, 1).0, OVERLAY_FP);
        assert_eq!(img.get_pixel(1, 1).0, OVERLAY_TN);
        let same = overlay(&gt, &gt).unwrap();
        assert!(same.pixels().all(|p| p.0 != OVERLAY_FP && p.0 != OVERLAY_FN));
    }

    #[test]
    fn padding_and_cropping() {
        let t = ImageTile::from_fn(20, 9, 3, |y, x, _| ((y + x) % 2) as f64);
        let p = pad_to_multiple(&t, 16);
        assert_eq!((p.height(), p.width()), (32, 16));
        assert_eq!(p.get(19, 8, 0), t.get(19, 8, 0));
        assert_eq!(p.get(25, 3, 1), 0.0);
        let mut cfg = tiny_config();
        cfg.model.e2a = true;
        let model = LrNet::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let pred = predict_pair(&model, NormalizeMode::Unit, &t, &t).unwrap();
        assert_eq!((pred.prob.height(), pred.prob.width()), (20, 9));
        assert_eq!(pred.deep.unwrap().height(), 2);
    }

    #[test]
    fn training_reduces_loss_and_is_repeatable() {
        let s = samples(4, 32);
        let mut cfg = tiny_config();
        cfg.epochs = 6;
        cfg.lr = 3e-3;
        let run = || {
            let mut t = Trainer::new(cfg.clone()).unwrap();
            t.fit(&s, &[]).unwrap();
            t.log.iter().map(|e| e.loss).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.last().unwrap() < &a[0]);
    }

    #[test]
    fn resume_continues_bit_exactly() {
        let s = samples(4, 32);
        let mut cfg = tiny_config();
        cfg.epochs = 3;
        let mut straight = Trainer::new(cfg.clone()).unwrap();
        straight.fit(&s, &[]).unwrap();

        let mut first = Trainer::new(TrainConfig { epochs: 1, ..cfg.clone() }).unwrap();
        first.fit(&s, &[]).unwrap();
        let mut ck = first.checkpoint();
        ck.config.epochs = 3;
        let dir = tempfile::tempdir().unwrap();
        ck.save(&dir.path().join("c.ckpt")).unwrap();
        let mut resumed = Trainer::resume(&Checkpoint::load(&dir.path().join("c.ckpt")).unwrap()).unwrap();
        resumed.fit(&s, &[]).unwrap();
        let tail: Vec<f64> = straight.log[1..].iter().map(|e| e.loss).collect();
        assert_eq!(resumed.log.iter().map(|e| e.loss).collect::<Vec<_>>(), tail);
    }
}
