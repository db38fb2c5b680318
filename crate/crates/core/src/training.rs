//! Optimization loop, checkpoint selection, evaluation and timing.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split, NUM_KEYPOINTS};
use crate::decoder::{one_hot_labels, DecoderConfig, DecoderVariant};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::losses::{tensor as lt, LossBreakdown, WeightingStrategy};
use crate::model::{Model, ModelConfig, ModelInput, ModelOutput};
use crate::report::{mean, median, EvaluationReport, FpsMeasurement, PoseRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier on `lr` for the decoder parameters.
    pub decoder_lr_scale: f64,
    /// Final learning rate as a fraction of `lr`.
    pub lr_floor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub strategy: WeightingStrategy,
    pub encoder_enabled: bool,
    pub decoder: DecoderConfig,
    pub encoder: EncoderConfig,
    /// Validate (and checkpoint) every this many epochs; the last epoch always is.
    pub validate_every: usize,
    /// Brightness jitter on training images. Off by default.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            decoder_lr_scale: 1.0,
            lr_floor: 1e-3,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            strategy: WeightingStrategy::Equal,
            encoder_enabled: true,
            decoder: DecoderConfig::default(),
            encoder: EncoderConfig::default(),
            validate_every: 1,
            augment: false,
        }
    }
}

impl TrainConfig {
    /// Small-data defaults: shorter schedule, smaller batches and larger step sizes.
    ///
    /// The ray inputs of one frame differ by only a few hundredths, so the decoder needs
    /// a larger step than the encoder to fit within a short schedule.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            decoder_lr_scale: 4.0,
            batch_size: 4,
            epochs: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.decoder_lr_scale > 0.0) || self.batch_size == 0 || self.epochs == 0 || self.validate_every == 0 {
            return Err(Error::Config(
                "lr, decoder_lr_scale, batch_size, epochs and validate_every must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(Error::Config("lr_floor must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, width: usize, height: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                width,
                height,
                ..self.encoder
            },
            decoder: self.decoder,
            encoder_enabled: self.encoder_enabled,
            seed: self.seed,
        }
    }
}

/// Cosine annealing from `lr` at epoch 0 to `lr · floor` at the final epoch.
pub fn cosine_lr(lr: f64, floor: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return lr;
    }
    let min = lr * floor;
    let p = (epoch.min(epochs - 1)) as f64 / (epochs - 1) as f64;
    min + 0.5 * (lr - min) * (1.0 + (std::f64::consts::PI * p).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub split: Split,
    pub rot_mae: f64,
    pub trans_mae: f64,
    pub class_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub w_enc: f64,
    pub w_dec: f64,
    pub losses: LossBreakdown,
    /// Weighted objective actually minimized.
    pub objective: f64,
    pub seconds: f64,
    pub validation: Option<ValidationMetrics>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointScore {
    pub epoch: usize,
    pub rot_mae: f64,
    pub trans_mae: f64,
}

/// Lowest rotation MAE, then lowest translation MAE, then earliest epoch.
pub fn select_checkpoint(scores: &[CheckpointScore]) -> Option<CheckpointScore> {
    scores.iter().copied().min_by(|a, b| {
        a.rot_mae
            .total_cmp(&b.rot_mae)
            .then(a.trans_mae.total_cmp(&b.trans_mae))
            .then(a.epoch.cmp(&b.epoch))
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Holds the weights of the selected epoch.
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best: CheckpointScore,
}

/// Per-frame metadata of a loaded split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMeta {
    pub index: usize,
    pub scene_id: u32,
    pub class_id: usize,
    pub background_id: u32,
    pub frame: usize,
}

/// A split held in memory as flat arrays.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub split: Split,
    pub meta: Vec<FrameMeta>,
    pub camera: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    images: Option<Vec<f32>>,
    kp2d: Vec<f64>,
    kp3d: Vec<f64>,
    rot: Vec<f64>,
    trans: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Option<Tensor>,
    pub y2d: Tensor,
    pub y3d: Tensor,
    pub r: Tensor,
    pub t: Tensor,
    pub labels: Tensor,
    pub one_hot: Tensor,
    pub class_ids: Vec<usize>,
}

impl SplitData {
    pub fn load(dataset: &Dataset, split: Split, with_images: bool) -> Result<Self> {
        let indices = dataset.indices(split);
        let m = &dataset.manifest;
        let mut data = Self {
            split,
            meta: Vec::with_capacity(indices.len()),
            camera: m.intrinsics,
            width: m.width,
            height: m.height,
            images: with_images.then(Vec::new),
            kp2d: Vec::new(),
            kp3d: Vec::new(),
            rot: Vec::new(),
            trans: Vec::new(),
        };
        for index in indices {
            let (seq, _) = m.locate(index)?;
            let entry = &m.sequences[seq];
            let ann = if let Some(images) = &mut data.images {
                let s = dataset.load_sample(index)?;
                images.extend(s.image.to_chw_f32());
                s.annotation
            } else {
                dataset.load_annotation(index)?
            };
            data.meta.push(FrameMeta {
                index,
                scene_id: entry.scene_id,
                class_id: ann.class_id,
                background_id: entry.background_id,
                frame: ann.frame,
            });
            data.kp2d.extend(ann.keypoints_2d.as_flattened());
            data.kp3d.extend(ann.keypoints_3d.as_flattened());
            data.rot.extend(ann.rotation);
            data.trans.extend(ann.translation);
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn gt_pose(&self, i: usize) -> ([f64; 3], [f64; 3]) {
        let r = [self.rot[3 * i], self.rot[3 * i + 1], self.rot[3 * i + 2]];
        let t = [self.trans[3 * i], self.trans[3 * i + 1], self.trans[3 * i + 2]];
        (r, t)
    }

    pub fn batch(&self, rows: &[usize], dtype: DType, device: &Device, jitter: Option<&mut ChaCha8Rng>) -> Result<Batch> {
        let b = rows.len();
        let gather = |src: &[f64], width: usize| -> Vec<f64> {
            rows.iter().flat_map(|&i| src[i * width..(i + 1) * width].iter().copied()).collect()
        };
        let tensor = |v: Vec<f64>, shape: &[usize]| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
        };
        let images = match &self.images {
            Some(all) => {
                let plane = 3 * self.width * self.height;
                let mut v: Vec<f32> = Vec::with_capacity(b * plane);
                let mut jitter = jitter;
                for &i in rows {
                    let src = &all[i * plane..(i + 1) * plane];
                    match jitter.as_deref_mut() {
                        Some(rng) => {
                            let gain: f32 = rng.random_range(0.8..1.2);
                            v.extend(src.iter().map(|x| (x * gain).min(1.0)));
                        }
                        None => v.extend_from_slice(src),
                    }
                }
                Some(Tensor::from_vec(v, (b, 3, self.height, self.width), device)?.to_dtype(dtype)?)
            }
            None => None,
        };
        let class_ids: Vec<usize> = rows.iter().map(|&i| self.meta[i].class_id).collect();
        let labels: Vec<u32> = class_ids.iter().map(|&c| c as u32).collect();
        Ok(Batch {
            images,
            y2d: tensor(gather(&self.kp2d, 2 * NUM_KEYPOINTS), &[b, NUM_KEYPOINTS, 2])?,
            y3d: tensor(gather(&self.kp3d, 3 * NUM_KEYPOINTS), &[b, NUM_KEYPOINTS, 3])?,
            r: tensor(gather(&self.rot, 3), &[b, 3])?,
            t: tensor(gather(&self.trans, 3), &[b, 3])?,
            labels: Tensor::from_vec(labels, b, device)?,
            one_hot: one_hot_labels(&class_ids, dtype, device)?,
            class_ids,
        })
    }
}

fn run_model(model: &Model, batch: &Batch, k: &CameraIntrinsics) -> Result<ModelOutput> {
    match &batch.images {
        Some(img) if model.encoder.is_some() => model.forward(ModelInput::Images(img), k),
        _ => model.forward(
            ModelInput::Keypoints {
                y2d: &batch.y2d,
                class_dist: &batch.one_hot,
            },
            k,
        ),
    }
}

/// Differentiable loss terms of one batch: `[l_2d, l_cls, l_3d, l_rot, l_trans]`.
///
/// Keypoint errors are measured in pixels.
pub fn batch_losses(model: &Model, out: &ModelOutput, batch: &Batch) -> Result<[Tensor; 5]> {
    let zero = lt::zero(&out.decoder.t)?;
    let (l_2d, l_cls) = if model.encoder.is_some() {
        (lt::mse(&out.y2d, &batch.y2d)?, lt::cross_entropy(&out.class_dist, &batch.labels)?)
    } else {
        (zero.clone(), zero.clone())
    };
    let l_3d = match &out.decoder.y3d {
        Some(y3d) => lt::mse(y3d, &batch.y3d)?,
        None => zero,
    };
    let l_rot = lt::circular(&out.decoder.r, &batch.r)?;
    let l_trans = lt::mse(&out.decoder.t, &batch.t)?;
    Ok([l_2d, l_cls, l_3d, l_rot, l_trans])
}

fn append_log(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(value).expect("log record serializes");
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Trains a fresh model on the train split.
///
/// Validation runs on the valid split, or on the train split when the dataset has no
/// validation frames. With `out_dir`, every validated epoch is checkpointed, the log is
/// appended as JSON lines and the selected weights are copied to `best.ckpt`.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let device = Device::Cpu;
    let dtype = DType::F32;
    let m = &dataset.manifest;
    let model = Model::new(cfg.model_config(m.width, m.height), dtype, &device)?;

    let train_data = SplitData::load(dataset, Split::Train, cfg.encoder_enabled)?;
    if train_data.is_empty() {
        return Err(Error::EmptySplit(Split::Train.to_string()));
    }
    let valid_data = SplitData::load(dataset, Split::Valid, cfg.encoder_enabled)?;
    let valid_data = if valid_data.is_empty() {
        log::warn!("no validation frames; selecting checkpoints on the training split");
        None
    } else {
        Some(valid_data)
    };

    let (log_path, ckpt_dir) = match out_dir {
        Some(dir) => {
            let ckpt = dir.join("checkpoints");
            std::fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
            let log = dir.join(TRAIN_LOG);
            if log.exists() {
                std::fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
            }
            (Some(log), Some(ckpt))
        }
        None => (None, None),
    };

    let (dec_vars, enc_vars): (Vec<_>, Vec<_>) =
        model.params().vars().iter().cloned().partition(|(name, _)| name.starts_with("dec."));
    let adam = |vars: Vec<(String, candle_core::Var)>, lr: f64| {
        AdamW::new(
            vars.into_iter().map(|(_, v)| v).collect(),
            ParamsAdamW {
                lr,
                weight_decay: 0.0,
                ..Default::default()
            },
        )
    };
    let mut opt_enc = adam(enc_vars, cfg.lr)?;
    let mut opt_dec = adam(dec_vars, cfg.lr * cfg.decoder_lr_scale)?;
    let k = train_data.camera;
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0D0E);
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA11A_11A5);

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut scores = Vec::new();
    let mut best: Option<(CheckpointScore, Vec<Tensor>)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cosine_lr(cfg.lr, cfg.lr_floor, epoch, cfg.epochs);
        opt_enc.set_learning_rate(lr);
        opt_dec.set_learning_rate(lr * cfg.decoder_lr_scale);
        let (w_enc, w_dec) = cfg.strategy.weights(epoch, cfg.epochs);
        order.shuffle(&mut shuffle_rng);

        let mut sums = [0f64; 5];
        let mut objective_sum = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let jitter = cfg.augment.then_some(&mut jitter_rng);
            let batch = train_data.batch(rows, dtype, &device, jitter)?;
            let out = run_model(&model, &batch, &k)?;
            let terms = batch_losses(&model, &out, &batch)?;
            let enc = (&terms[0] + &terms[1])?;
            let dec = ((&terms[2] + &terms[3])? + &terms[4])?;
            let objective = ((enc * w_enc)? + (dec * w_dec)?)?;
            let n = rows.len() as f64;
            for (s, t) in sums.iter_mut().zip(&terms) {
                *s += n * lt::scalar(t)?;
            }
            let obj = lt::scalar(&objective)?;
            objective_sum += n * obj;
            if !obj.is_finite() {
                let detail = format!("objective {obj} with terms {sums:?} (batch-weighted sums so far)");
                append_log(
                    log_path.as_deref(),
                    &serde_json::json!({"epoch": epoch, "error": "non-finite loss", "detail": detail}),
                )?;
                return Err(Error::NonFinite { epoch, detail });
            }
            let grads = objective.backward()?;
            opt_enc.step(&grads)?;
            opt_dec.step(&grads)?;
        }
        let n = train_data.len() as f64;
        let [l_2d, l_cls, l_3d, l_rot, l_trans] = sums.map(|s| s / n);
        let losses = LossBreakdown::from_terms(l_2d, l_cls, l_3d, l_rot, l_trans);

        let validate = (epoch + 1) % cfg.validate_every == 0 || epoch + 1 == cfg.epochs;
        let (validation, checkpoint) = if validate {
            let data = valid_data.as_ref().unwrap_or(&train_data);
            let records = predict(&model, data)?;
            let rot: Vec<f64> = records.iter().map(|r| r.rot_error).collect();
            let trans: Vec<f64> = records.iter().map(|r| r.trans_error).collect();
            let report = EvaluationReport::from_records("", data.split, &records);
            let metrics = ValidationMetrics {
                split: data.split,
                rot_mae: mean(&rot),
                trans_mae: mean(&trans),
                class_accuracy: report.class_accuracy,
            };
            let score = CheckpointScore {
                epoch,
                rot_mae: metrics.rot_mae,
                trans_mae: metrics.trans_mae,
            };
            scores.push(score);
            if select_checkpoint(&scores) == Some(score) {
                best = Some((score, model.snapshot()?));
            }
            let path = match &ckpt_dir {
                Some(dir) => {
                    let p = dir.join(format!("epoch_{epoch:03}.ckpt"));
                    model.save(&p, Some(epoch))?;
                    Some(p)
                }
                None => None,
            };
            (Some(metrics), path)
        } else {
            (None, None)
        };

        let record = EpochRecord {
            epoch,
            lr,
            w_enc,
            w_dec,
            losses,
            objective: objective_sum / n,
            seconds: started.elapsed().as_secs_f64(),
            validation,
            checkpoint,
        };
        log::info!(
            "epoch {epoch}: total {:.5} (2d {:.2e} cls {:.3} 3d {:.2e} rot {:.2e} trans {:.2e}){}",
            losses.l_total,
            l_2d,
            l_cls,
            l_3d,
            l_rot,
            l_trans,
            validation.map_or(String::new(), |v| format!(
                " | {} rot {:.2}° trans {:.4} m",
                v.split, v.rot_mae, v.trans_mae
            ))
        );
        append_log(log_path.as_deref(), &record)?;
        log.push(record);
    }

    let (best, weights) = best.expect("the final epoch is always validated");
    model.restore(&weights)?;
    if let Some(dir) = out_dir {
        model.save(&dir.join(BEST_CHECKPOINT), Some(best.epoch))?;
    }
    Ok(TrainOutcome { model, log, best })
}

pub const EVAL_BATCH: usize = 32;

/// Runs the model over a loaded split, in order.
pub fn predict(model: &Model, data: &SplitData) -> Result<Vec<PoseRecord>> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in rows.chunks(EVAL_BATCH) {
        let batch = data.batch(chunk, model.dtype(), model.device(), None)?;
        let pred = run_model(model, &batch, &data.camera)?;
        let r = pred.decoder.r.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let t = pred.decoder.t.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let classes: Option<Vec<u32>> = match model.encoder {
            Some(_) => Some(pred.class_dist.argmax(1)?.to_vec1::<u32>()?),
            None => None,
        };
        for (j, &row) in chunk.iter().enumerate() {
            let meta = data.meta[row];
            let (r_gt, t_gt) = data.gt_pose(row);
            out.push(PoseRecord::new(
                meta.scene_id,
                meta.class_id,
                meta.background_id,
                meta.frame,
                classes.as_ref().map(|c| c[j] as usize),
                [r[j][0], r[j][1], r[j][2]],
                [t[j][0], t[j][1], t[j][2]],
                r_gt,
                t_gt,
            ));
        }
    }
    Ok(out)
}

pub fn check_compatible(model: &Model, dataset: &Dataset) -> Result<()> {
    let (w, h) = model.cfg.resolution();
    let m = &dataset.manifest;
    if (w, h) != (m.width, m.height) {
        return Err(Error::CheckpointMismatch(format!(
            "model expects {w}x{h} images, dataset has {}x{}",
            m.width, m.height
        )));
    }
    Ok(())
}

/// Evaluates on one split and returns the report with its per-frame records.
pub fn evaluate(model: &Model, dataset: &Dataset, split: Split, method: &str) -> Result<(EvaluationReport, Vec<PoseRecord>)> {
    check_compatible(model, dataset)?;
    let data = SplitData::load(dataset, split, model.encoder.is_some())?;
    if data.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let records = predict(model, &data)?;
    Ok((EvaluationReport::from_records(method, split, &records), records))
}

/// Median single-frame forward time over `iterations` runs after `warmup` runs.
///
/// Inputs are synthetic tensors created up front, so no I/O is timed.
pub fn measure_fps(model: &Model, device_tag: &str, warmup: usize, iterations: usize) -> Result<FpsMeasurement> {
    if iterations == 0 {
        return Err(Error::Config("at least one timed iteration is required".into()));
    }
    let (w, h) = model.cfg.resolution();
    let dev = model.device();
    let dtype = model.dtype();
    let k = crate::dataset::default_intrinsics(w, h);
    let image = Tensor::full(0.5f32, (1, 3, h, w), dev)?.to_dtype(dtype)?;
    let y2d = Tensor::full((w / 2) as f32, (1, NUM_KEYPOINTS, 2), dev)?.to_dtype(dtype)?;
    let dist = one_hot_labels(&[0], dtype, dev)?;
    let run = || -> Result<()> {
        let input = match model.encoder {
            Some(_) => ModelInput::Images(&image),
            None => ModelInput::Keypoints { y2d: &y2d, class_dist: &dist },
        };
        let out = model.forward(input, &k)?;
        // Force evaluation of the lazy outputs.
        out.decoder.t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Ok(())
    };
    for _ in 0..warmup {
        run()?;
    }
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t0 = Instant::now();
        run()?;
        times.push(t0.elapsed().as_secs_f64());
    }
    let med = median(&times);
    Ok(FpsMeasurement {
        fps: 1.0 / med,
        median_seconds: med,
        iterations,
        device: device_tag.to_string(),
    })
}

/// Names the decoder variant in report headers.
pub fn method_label(cfg: &ModelConfig) -> String {
    let enc = if cfg.encoder_enabled { "encoder" } else { "gt-keypoints" };
    let dec = match cfg.decoder.variant {
        DecoderVariant::Full => "full decoder".to_string(),
        v => format!("decoder variant {} ({v})", v.index()),
    };
    format!("{enc} + {dec}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_shape() {
        let e = 20;
        let lrs: Vec<f64> = (0..e).map(|i| cosine_lr(1e-3, 1e-3, i, e)).collect();
        assert_eq!(lrs[0], 1e-3);
        assert!(lrs[e - 1] <= 1e-2 * 1e-3);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn checkpoint_selection_rules() {
        let s = |epoch, rot_mae, trans_mae| CheckpointScore { epoch, rot_mae, trans_mae };
        assert_eq!(select_checkpoint(&[s(0, 3.0, 1.0)]).unwrap().epoch, 0);
        let picked = select_checkpoint(&[s(1, 20.0, 0.1), s(2, 10.0, 0.1), s(3, 15.0, 0.1)]).unwrap();
        assert_eq!(picked.epoch, 2);
        let picked = select_checkpoint(&[s(1, 10.0, 0.3), s(2, 10.0, 0.2)]).unwrap();
        assert_eq!(picked.epoch, 2);
        let picked = select_checkpoint(&[s(4, 10.0, 0.2), s(2, 10.0, 0.2)]).unwrap();
        assert_eq!(picked.epoch, 2);
        assert!(select_checkpoint(&[]).is_none());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::desk() };
        assert!(cfg.validate().is_err());
    }
}
