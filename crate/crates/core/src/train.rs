//! Training: Adam optimization with a two-phase learning-rate schedule,
//! paired crop/flip/rotate augmentation, and the deterministic training
//! loop with log, checkpoint and resumable state output.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{reconstruction_loss, smoothness_loss, LossWeights};
use crate::mcn::checkpoint::{read_named_tensors, save_checkpoint, write_named_tensors, NamedEntry};
use crate::mcn::McnModel;
use crate::raw::{normalize_black_level, pack, read_raw_frame, rimef_gain, amplify, IlluminationParams};
use crate::synth::DatasetManifest;
use crate::tensor::io::load_tensor;
use crate::tensor::{Scalar, Tensor};

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_late: f64,
    pub lr_switch_epoch: usize,
    /// Crop extent in raw mosaic units; the packed crop is `crop / factor`.
    pub crop: usize,
    pub seed: u64,
    pub batch: usize,
    pub weights: LossWeights,
    /// Write a checkpoint every this many epochs (plus the final one).
    pub checkpoint_interval: usize,
    /// Stop after this many optimizer steps regardless of epochs; the
    /// desk-scale stand-in for the full epoch budget.
    pub max_steps: Option<usize>,
    /// Random crop/flip/rotate. Off, every sample trains on its top-left
    /// window untransformed (the overfitting regime).
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4000,
            lr_initial: 1e-4,
            lr_late: 1e-5,
            lr_switch_epoch: 2000,
            crop: 512,
            seed: 0,
            batch: 1,
            weights: LossWeights::default(),
            checkpoint_interval: 100,
            max_steps: None,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, cfa_period: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Parameter("batch must be at least 1".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Parameter("checkpoint_interval must be positive".into()));
        }
        if self.crop % (2 * cfa_period) != 0 {
            return Err(Error::Parameter(format!(
                "crop {} must be divisible by twice the CFA period ({})",
                self.crop,
                2 * cfa_period
            )));
        }
        if !(self.lr_initial > 0.0 && self.lr_late > 0.0) {
            return Err(Error::Parameter("learning rates must be positive".into()));
        }
        self.weights.validate()
    }
}

/// Two-phase schedule: `lr_initial` before the switch epoch, `lr_late`
/// from the switch epoch on.
pub fn learning_rate(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.lr_switch_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_late
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter list
/// they were first stepped with and live in the parameter precision, so
/// saving and reloading the state is lossless for f32 training.
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over `params`. Missing gradients count as zero; a
    /// non-finite gradient aborts with the parameter name.
    pub fn step(&mut self, params: &[(String, Tensor<T>)], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Parameter(format!("learning rate {lr} must be > 0")));
        }
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|(_, p)| vec![T::zero(); p.numel()])
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer state holds {} parameters, step got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let corr1 = T::from_f64(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let corr2 = T::from_f64(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let lr_t = T::from_f64(lr);
        let eps = T::from_f64(self.epsilon);

        for (i, (name, p)) in params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter '{name}' at step {}",
                    self.t
                )));
            }
            let mut data = p.to_vec();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + one_m_b1 * g;
                v[j] = b2 * v[j] + one_m_b2 * g * g;
                let m_hat = m[j] * corr1;
                let v_hat = v[j] * corr2;
                data[j] = data[j] - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_data(&data)?;
        }
        Ok(())
    }

    fn state_entries(&self, params: &[(String, Tensor<T>)]) -> Vec<NamedEntry> {
        let mut out = Vec::new();
        for (i, (name, p)) in params.iter().enumerate() {
            let shape = p.shape().to_vec();
            let to_f32 = |v: &[T]| v.iter().map(|&x| Scalar::to_f64(x) as f32).collect();
            out.push((format!("adam.{name}.m"), shape.clone(), to_f32(&self.m[i])));
            out.push((format!("adam.{name}.v"), shape, to_f32(&self.v[i])));
        }
        out.push(("trainer.t".to_string(), vec![1], vec![self.t as f32]));
        out
    }

    fn load_state(
        &mut self,
        params: &[(String, Tensor<T>)],
        entries: &std::collections::HashMap<String, (Vec<usize>, Vec<f32>)>,
    ) -> Result<()> {
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (name, p) in params {
            for (key, store) in [(format!("adam.{name}.m"), &mut m), (format!("adam.{name}.v"), &mut v)] {
                let Some((shape, values)) = entries.get(&key) else {
                    return Err(Error::Parameter(format!("train state missing '{key}'")));
                };
                if shape != p.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "train state '{key}': shape {:?} vs {:?}",
                        shape,
                        p.shape()
                    )));
                }
                store.push(values.iter().map(|&x| T::from_f64(x as f64)).collect());
            }
        }
        let t = entries
            .get("trainer.t")
            .ok_or_else(|| Error::Parameter("train state missing 'trainer.t'".into()))?;
        self.t = t.1[0] as u64;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

// ── Augmentation ─────────────────────────────────────────────────────────

/// Crop a 4-D tensor spatially.
pub fn crop_nchw<T: Scalar>(
    t: &Tensor<T>,
    y0: usize,
    x0: usize,
    ch: usize,
    cw: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = match t.shape() {
        [n, c, h, w] => [*n, *c, *h, *w],
        other => return Err(Error::Dimension(format!("crop expects 4-D, got {other:?}"))),
    };
    if y0 + ch > h || x0 + cw > w {
        return Err(Error::Dimension(format!(
            "crop {ch}x{cw}@({y0},{x0}) exceeds {h}x{w}"
        )));
    }
    let d = t.data();
    let mut out = Vec::with_capacity(n * c * ch * cw);
    for p in 0..n * c {
        for y in 0..ch {
            let base = p * h * w + (y0 + y) * w + x0;
            out.extend_from_slice(&d[base..base + cw]);
        }
    }
    drop(d);
    Tensor::from_vec(&[n, c, ch, cw], out)
}

/// Mirror a 4-D tensor along x.
pub fn hflip_nchw<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]];
    let d = t.data();
    let mut out = Vec::with_capacity(d.len());
    for p in 0..n * c {
        for y in 0..h {
            let base = p * h * w + y * w;
            for x in 0..w {
                out.push(d[base + w - 1 - x]);
            }
        }
    }
    drop(d);
    Tensor::from_vec(t.shape(), out).expect("same element count")
}

/// Rotate a square 4-D tensor a quarter turn clockwise.
pub fn rot90_nchw<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]];
    if h != w {
        return Err(Error::Dimension(format!(
            "rotation needs square crops, got {h}x{w}"
        )));
    }
    let d = t.data();
    let mut out = vec![T::zero(); d.len()];
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..h {
            for x in 0..w {
                out[base + y * w + x] = d[base + (h - 1 - x) * w + y];
            }
        }
    }
    drop(d);
    Tensor::from_vec(t.shape(), out)
}

/// The geometric transform of one augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub y0: usize,
    pub x0: usize,
    pub flip: bool,
    pub quarter_turns: usize,
}

/// Random aligned crop plus flip and 90-degree rotation of a packed input
/// and its full-resolution target. `crop` is the raw-mosaic extent; the
/// packed window is `crop / factor` and the target window `crop`, both
/// anchored at the same physical site. Rotations stay on the packed grid
/// so the CFA phase is never violated.
pub fn augment_pair<T: Scalar>(
    packed: &Tensor<T>,
    target: &Tensor<T>,
    factor: usize,
    crop: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<T>, Tensor<T>, AugmentDraw)> {
    let [_, _, hp, wp] = match packed.shape() {
        [n, c, h, w] => [*n, *c, *h, *w],
        other => {
            return Err(Error::Dimension(format!(
                "packed input must be 4-D, got {other:?}"
            )))
        }
    };
    if crop % factor != 0 {
        return Err(Error::Parameter(format!(
            "crop {crop} must be divisible by the upsample factor {factor}"
        )));
    }
    let cp = crop / factor;
    if cp > hp || cp > wp {
        return Err(Error::Dimension(format!(
            "crop {crop} exceeds the {}x{} mosaic",
            hp * factor,
            wp * factor
        )));
    }
    let draw = AugmentDraw {
        y0: rng.random_range(0..=hp - cp),
        x0: rng.random_range(0..=wp - cp),
        flip: rng.random_range(0..2) == 1,
        quarter_turns: rng.random_range(0..4),
    };
    let mut x = crop_nchw(packed, draw.y0, draw.x0, cp, cp)?;
    let mut t = crop_nchw(target, draw.y0 * factor, draw.x0 * factor, crop, crop)?;
    if draw.flip {
        x = hflip_nchw(&x);
        t = hflip_nchw(&t);
    }
    for _ in 0..draw.quarter_turns {
        x = rot90_nchw(&x)?;
        t = rot90_nchw(&t)?;
    }
    Ok((x, t, draw))
}

// ── Dataset loading ──────────────────────────────────────────────────────

/// One training sample, preprocessed to network form.
pub struct LoadedPair<T: Scalar = f32> {
    pub id: String,
    /// Packed, amplified input, shape (1, C, h, w).
    pub packed: Tensor<T>,
    /// Ground truth, shape (1, 3, H, W) with H = h * factor.
    pub target: Tensor<T>,
    pub ratio: f64,
}

/// Load every manifest entry and run the raw pipeline on it:
/// normalize -> RIMEF gain (training regime, `beta = 1`) -> amplify -> pack.
pub fn load_training_set<T: Scalar>(manifest: &DatasetManifest) -> Result<Vec<LoadedPair<T>>> {
    manifest
        .entries
        .iter()
        .map(|entry| {
            let frame = read_raw_frame(&entry.input, &entry.meta)?;
            let normalized = normalize_black_level::<T>(&frame);
            let params = IlluminationParams::training(frame.exposure_ratio);
            let gain = rimef_gain(&normalized, &params)?;
            let amplified = amplify(&normalized, &gain)?;
            let packed = pack(&amplified, &frame.cfa)?;
            let target: Tensor<T> = load_tensor(&entry.target)?;
            let [c, h, w] = match target.shape() {
                [c, h, w] => [*c, *h, *w],
                other => {
                    return Err(Error::Dimension(format!(
                        "target must be (3,H,W), got {other:?}"
                    )))
                }
            };
            let target = target.reshape(&[1, c, h, w])?.detached();
            let id = entry
                .input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "sample".to_string());
            Ok(LoadedPair {
                id: id.trim_end_matches(".raw").to_string(),
                packed,
                target,
                ratio: frame.exposure_ratio,
            })
        })
        .collect()
}

// ── The loop ─────────────────────────────────────────────────────────────

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub recon: f64,
    pub smooth: f64,
    pub lr: f64,
}

/// Everything a training run leaves behind.
pub struct TrainReport {
    pub rows: Vec<TrainRow>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub state: PathBuf,
}

pub fn rows_to_csv(rows: &[TrainRow]) -> String {
    let mut out = String::from("epoch,step,loss,recon,smooth,lr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.step, r.loss, r.recon, r.smooth, r.lr
        ));
    }
    out
}

fn step_rng(seed: u64, epoch: usize, sample: usize) -> ChaCha8Rng {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z ^= (sample as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Write model parameters, optimizer moments and progress counters so a
/// run can resume exactly where it stopped.
pub fn save_train_state<T: Scalar>(
    path: &Path,
    model: &McnModel<T>,
    adam: &Adam<T>,
    next_epoch: usize,
) -> Result<()> {
    let params = model.named_params();
    let mut entries: Vec<NamedEntry> = params
        .iter()
        .map(|(name, p)| {
            (
                name.clone(),
                p.shape().to_vec(),
                p.data().iter().map(|&v| Scalar::to_f64(v) as f32).collect(),
            )
        })
        .collect();
    entries.extend(adam.state_entries(&params));
    entries.push((
        "trainer.next_epoch".to_string(),
        vec![1],
        vec![next_epoch as f32],
    ));
    write_named_tensors(path, &entries)
}

/// Restore model parameters and optimizer state; returns the epoch to
/// resume from.
pub fn load_train_state<T: Scalar>(
    path: &Path,
    model: &McnModel<T>,
    adam: &mut Adam<T>,
) -> Result<usize> {
    let entries = read_named_tensors(path)?;
    let params = model.named_params();
    let model_entries: Vec<NamedEntry> = entries
        .iter()
        .filter(|(n, _, _)| !n.starts_with("adam.") && !n.starts_with("trainer."))
        .cloned()
        .collect();
    model.load_entries(&model_entries)?;
    let map: std::collections::HashMap<String, (Vec<usize>, Vec<f32>)> = entries
        .into_iter()
        .map(|(n, s, v)| (n, (s, v)))
        .collect();
    adam.load_state(&params, &map)?;
    let next = map
        .get("trainer.next_epoch")
        .ok_or_else(|| Error::Parameter("train state missing 'trainer.next_epoch'".into()))?;
    Ok(next.1[0] as usize)
}

/// Train `model` over the loaded pairs. Fully deterministic for a given
/// seed: sample transforms derive from (seed, epoch, sample index), so
/// results do not depend on timing or thread count.
pub fn train_loop<T: Scalar>(
    model: &McnModel<T>,
    cfg: &TrainConfig,
    pairs: &[LoadedPair<T>],
    out_dir: &Path,
) -> Result<TrainReport> {
    let mut adam = Adam::new();
    run_training(model, cfg, pairs, out_dir, &mut adam, 0)
}

/// Continue a run from a state file produced by [`save_train_state`].
pub fn resume_train_loop<T: Scalar>(
    model: &McnModel<T>,
    cfg: &TrainConfig,
    pairs: &[LoadedPair<T>],
    out_dir: &Path,
    state_path: &Path,
) -> Result<TrainReport> {
    let mut adam = Adam::new();
    let start_epoch = load_train_state(state_path, model, &mut adam)?;
    run_training(model, cfg, pairs, out_dir, &mut adam, start_epoch)
}

fn run_training<T: Scalar>(
    model: &McnModel<T>,
    cfg: &TrainConfig,
    pairs: &[LoadedPair<T>],
    out_dir: &Path,
    adam: &mut Adam<T>,
    start_epoch: usize,
) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    cfg.validate(2)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let params = model.named_params();
    let factor = model.config.upsample_factor;
    let checkpoint_path = out_dir.join("model.mcnc");
    let log_path = out_dir.join("train_log.csv");
    let state_path = out_dir.join("train_state.mcnc");

    let mut rows = Vec::new();
    let steps_per_epoch = pairs.len().div_ceil(cfg.batch);
    let mut global_step = start_epoch * steps_per_epoch;
    let mut done = cfg.max_steps.is_some_and(|m| global_step >= m);

    let mut epoch = start_epoch;
    while epoch < cfg.epochs && !done {
        let lr = learning_rate(epoch, cfg);
        for (step_in_epoch, chunk) in pairs.chunks(cfg.batch).enumerate() {
            let mut recon_sum: Option<Tensor<T>> = None;
            let mut smooth_sum: Option<Tensor<T>> = None;
            for (k, pair) in chunk.iter().enumerate() {
                let sample_index = step_in_epoch * cfg.batch + k;
                let (x, t) = if cfg.augment {
                    let mut rng = step_rng(cfg.seed, epoch, sample_index);
                    let (x, t, _) =
                        augment_pair(&pair.packed, &pair.target, factor, cfg.crop, &mut rng)?;
                    (x, t)
                } else {
                    let cp = cfg.crop / factor;
                    (
                        crop_nchw(&pair.packed, 0, 0, cp, cp)?,
                        crop_nchw(&pair.target, 0, 0, cfg.crop, cfg.crop)?,
                    )
                };
                let outputs = model.forward(&x)?;
                let r = reconstruction_loss(&outputs, &t)?;
                let s = smoothness_loss(&outputs)?;
                recon_sum = Some(match recon_sum {
                    None => r,
                    Some(acc) => acc.add(&r)?,
                });
                smooth_sum = Some(match smooth_sum {
                    None => s,
                    Some(acc) => acc.add(&s)?,
                });
            }
            let inv = 1.0 / chunk.len() as f64;
            let recon = recon_sum.unwrap().scale(inv);
            let smooth = smooth_sum.unwrap().scale(inv);
            let total = recon
                .scale(cfg.weights.lambda_r)
                .add(&smooth.scale(cfg.weights.lambda_s))?;

            let loss_v = Scalar::to_f64(total.item()?);
            if !loss_v.is_finite() {
                save_train_state(&out_dir.join("abort_state.mcnc"), model, adam, epoch)?;
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss_v} at epoch {epoch} step {step_in_epoch}; state dumped"
                )));
            }
            model.zero_grads();
            total.backward()?;
            adam.step(&params, lr)?;

            rows.push(TrainRow {
                epoch,
                step: step_in_epoch,
                loss: loss_v,
                recon: Scalar::to_f64(recon.item()?),
                smooth: Scalar::to_f64(smooth.item()?),
                lr,
            });
            global_step += 1;
            if cfg.max_steps.is_some_and(|m| global_step >= m) {
                done = true;
                break;
            }
        }
        epoch += 1;
        if epoch % cfg.checkpoint_interval == 0 && epoch < cfg.epochs && !done {
            save_checkpoint(&out_dir.join(format!("model_epoch{epoch:05}.mcnc")), model)?;
            save_train_state(&state_path, model, adam, epoch)?;
        }
    }

    save_checkpoint(&checkpoint_path, model)?;
    save_train_state(&state_path, model, adam, epoch)?;
    std::fs::write(&log_path, rows_to_csv(&rows))
        .map_err(|e| Error::io(log_path.display().to_string(), e))?;
    Ok(TrainReport {
        rows,
        checkpoint: checkpoint_path,
        log: log_path,
        state: state_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcn::McnConfig;
    use crate::raw::Cfa;
    use crate::synth::{build_dataset, load_dataset, SensorModel, DEFAULT_RATIOS};

    #[test]
    fn learning_rate_schedule_boundaries() {
        let cfg = TrainConfig::default();
        assert_eq!(learning_rate(0, &cfg), 1e-4);
        assert_eq!(learning_rate(1999, &cfg), 1e-4);
        // The switch epoch itself belongs to the late phase.
        assert_eq!(learning_rate(2000, &cfg), 1e-5);
        assert_eq!(learning_rate(3999, &cfg), 1e-5);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With m_hat = g and v_hat = g^2 the first update is -lr * sign(g)
        // up to epsilon.
        let p = Tensor::param_from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        p.accumulate_grad(&[0.7, -3.0, 0.001]);
        let before = p.to_vec();
        let mut adam = Adam::new();
        adam.step(&[("p".to_string(), p.clone())], 1e-2).unwrap();
        let after = p.to_vec();
        for (i, sign) in [1.0f64, -1.0, 1.0].iter().enumerate() {
            let delta = after[i] - before[i];
            assert!(
                (delta + 1e-2 * sign).abs() < 1e-6,
                "delta {delta} vs {}",
                -1e-2 * sign
            );
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let p = Tensor::param_from_vec(&[4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let mut adam = Adam::new();
        let named = vec![("p".to_string(), p.clone())];
        adam.step(&named, 1e-3).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn adam_matches_scalar_recurrence_oracle() {
        // Ten steps on f(w) = (w - 3)^2 / 2, gradient w - 3.
        let p = Tensor::param_from_vec(&[1], vec![0.0f64]).unwrap();
        let named = vec![("w".to_string(), p.clone())];
        let mut adam = Adam::new();
        let lr = 0.1;

        // Independent recurrence in plain f64 scalars.
        let (b1, b2, eps) = (0.9f64, 0.999, 1e-8);
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = w - 3.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            w -= lr * m_hat / (v_hat.sqrt() + eps);

            p.zero_grad();
            let g_t = p.to_vec()[0] - 3.0;
            p.accumulate_grad(&[g_t]);
            adam.step(&named, lr).unwrap();
            let got = p.to_vec()[0];
            assert!(
                (got - w).abs() / w.abs().max(1e-12) < 1e-7,
                "step {t}: {got} vs {w}"
            );
        }
    }

    #[test]
    fn adam_update_has_odd_symmetry() {
        // Flipping gradients and parameters flips the trajectory.
        let p1 = Tensor::param_from_vec(&[2], vec![0.4f64, -1.2]).unwrap();
        let p2 = Tensor::param_from_vec(&[2], vec![-0.4f64, 1.2]).unwrap();
        let mut a1 = Adam::new();
        let mut a2 = Adam::new();
        let n1 = vec![("p".to_string(), p1.clone())];
        let n2 = vec![("p".to_string(), p2.clone())];
        for k in 0..5 {
            let g = vec![0.3 + k as f64, -0.7];
            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
            p1.zero_grad();
            p1.accumulate_grad(&g);
            p2.zero_grad();
            p2.accumulate_grad(&neg);
            a1.step(&n1, 0.05).unwrap();
            a2.step(&n2, 0.05).unwrap();
            for (a, b) in p1.to_vec().iter().zip(p2.to_vec()) {
                assert!((a + b).abs() < 1e-14, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let p = Tensor::param_from_vec(&[1], vec![0.0f64]).unwrap();
        p.accumulate_grad(&[f64::NAN]);
        let mut adam = Adam::new();
        let err = adam.step(&[("p".to_string(), p)], 1e-3).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    fn toy_pair(size: usize, seed: u64) -> LoadedPair<f32> {
        let sensor = SensorModel {
            shot_noise_dn: 0.0,
            read_noise_dn: 0.0,
            ..SensorModel::default()
        };
        let cfa = Cfa::bayer_rggb();
        let scene: Tensor<f64> = crate::synth::generate_scene(seed, size).unwrap();
        let snapped = Tensor::from_vec(
            scene.shape(),
            scene.data().iter().map(|&v| sensor.snap(v)).collect(),
        )
        .unwrap();
        let frame = crate::synth::mosaic(&snapped, &cfa, &sensor).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let short =
            crate::synth::simulate_short_exposure(&frame, 100.0, &sensor, &mut rng).unwrap();
        let normalized = normalize_black_level::<f32>(&short);
        let params = IlluminationParams::training(100.0);
        let gain = rimef_gain(&normalized, &params).unwrap();
        let amplified = amplify(&normalized, &gain).unwrap();
        let packed = pack(&amplified, &cfa).unwrap();
        let target_f32: Vec<f32> = snapped.data().iter().map(|&v| v as f32).collect();
        let target = Tensor::from_vec(&[1, 3, size, size], target_f32).unwrap();
        LoadedPair {
            id: format!("toy_{seed}"),
            packed,
            target,
            ratio: 100.0,
        }
    }

    #[test]
    fn augmentation_is_aligned_and_deterministic() {
        let pair = toy_pair(64, 3);
        let mut rng_a = ChaCha8Rng::seed_from_u64(5);
        let mut rng_b = ChaCha8Rng::seed_from_u64(5);
        let (xa, ta, draw) = augment_pair(&pair.packed, &pair.target, 2, 32, &mut rng_a).unwrap();
        let (xb, tb, _) = augment_pair(&pair.packed, &pair.target, 2, 32, &mut rng_b).unwrap();
        assert_eq!(xa.to_vec(), xb.to_vec());
        assert_eq!(ta.to_vec(), tb.to_vec());
        assert_eq!(xa.shape(), &[1, 4, 16, 16]);
        assert_eq!(ta.shape(), &[1, 3, 32, 32]);

        // De-augment: undo rotations and flip, then compare against the
        // plain crops at the drawn offsets.
        let mut x = xa;
        let mut t = ta;
        for _ in 0..(4 - draw.quarter_turns) % 4 {
            x = rot90_nchw(&x).unwrap();
            t = rot90_nchw(&t).unwrap();
        }
        if draw.flip {
            x = hflip_nchw(&x);
            t = hflip_nchw(&t);
        }
        let x0 = crop_nchw(&pair.packed, draw.y0, draw.x0, 16, 16).unwrap();
        let t0 = crop_nchw(&pair.target, draw.y0 * 2, draw.x0 * 2, 32, 32).unwrap();
        assert_eq!(x.to_vec(), x0.to_vec());
        assert_eq!(t.to_vec(), t0.to_vec());
    }

    #[test]
    fn flipping_packed_and_target_preserves_site_correspondence() {
        // Flip the packed tensor and the target jointly, unpack, and check
        // that packed pixel (y, x) still describes the target block at
        // (2y, 2x): the R channel value must equal the R site of the block.
        let pair = toy_pair(32, 9);
        let flipped_x = hflip_nchw(&pair.packed);
        let flipped_t = hflip_nchw(&pair.target);
        let xp = flipped_x.to_vec();
        let tp = flipped_t.to_vec();
        let (hp, wp, hw) = (16usize, 16usize, 32usize);
        // Noiseless ratio-100 short frame amplified by exactly 100: packed
        // values approximate target site values up to quantization.
        for y in 0..hp {
            for x in 0..wp {
                let packed_r = xp[y * wp + x] as f64;
                let target_r = tp[(2 * y) * hw + 2 * x + 1] as f64; // flipped block, R site moves to odd column
                assert!(
                    (packed_r - target_r).abs() < 0.02,
                    "({y},{x}): {packed_r} vs {target_r}"
                );
            }
        }
    }

    #[test]
    fn augmentation_rejects_oversized_crops() {
        let pair = toy_pair(32, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment_pair(&pair.packed, &pair.target, 2, 64, &mut rng).is_err());
    }

    #[test]
    fn overfit_single_pair_reduces_loss() {
        // 500 steps on one 64x64 pair at width divisor 8 must cut the loss
        // to below 30% of the first step's value.
        let dir = std::env::temp_dir().join(format!("train-overfit-{}", std::process::id()));
        let model: McnModel<f32> =
            McnModel::init(McnConfig::rmcn(2).with_width_divisor(8), 77).unwrap();
        let pair = toy_pair(64, 21);
        // Desk-scale overfit regime: the full-dataset default of 1e-4
        // barely moves freshly initialized weights in 500 steps.
        let cfg = TrainConfig {
            epochs: 500,
            lr_initial: 1e-3,
            crop: 64,
            seed: 7,
            checkpoint_interval: 1000,
            ..TrainConfig::default()
        };
        let report = train_loop(&model, &cfg, &[pair], &dir).unwrap();
        let first = report.rows.first().unwrap().loss;
        let last = report.rows.last().unwrap().loss;
        assert!(
            last < 0.3 * first,
            "loss {last} did not reach 30% of {first}"
        );
        assert!(report.rows.iter().all(|r| r.loss.is_finite()));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn training_is_reproducible_and_resumable() {
        let base = std::env::temp_dir().join(format!("train-resume-{}", std::process::id()));
        let data_dir = base.join("data");
        let manifest = build_dataset(
            &data_dir,
            2,
            32,
            5,
            &Cfa::bayer_rggb(),
            &SensorModel::default(),
            &DEFAULT_RATIOS,
        )
        .unwrap();
        let pairs: Vec<LoadedPair<f32>> =
            load_training_set(&load_dataset(&manifest).unwrap()).unwrap();
        let cfg = TrainConfig {
            epochs: 6,
            crop: 32,
            seed: 11,
            checkpoint_interval: 100,
            ..TrainConfig::default()
        };

        // Run A: straight through.
        let model_a: McnModel<f32> =
            McnModel::init(McnConfig::rmcn(2).with_width_divisor(16), 13).unwrap();
        let report_a = train_loop(&model_a, &cfg, &pairs, &base.join("a")).unwrap();

        // Run B: identical seed, bit-identical artifacts.
        let model_b: McnModel<f32> =
            McnModel::init(McnConfig::rmcn(2).with_width_divisor(16), 13).unwrap();
        let report_b = train_loop(&model_b, &cfg, &pairs, &base.join("b")).unwrap();
        assert_eq!(
            std::fs::read(&report_a.checkpoint).unwrap(),
            std::fs::read(&report_b.checkpoint).unwrap()
        );
        assert_eq!(
            std::fs::read(&report_a.log).unwrap(),
            std::fs::read(&report_b.log).unwrap()
        );

        // Run C: stop after 3 epochs, resume, and match run A's tail.
        let model_c: McnModel<f32> =
            McnModel::init(McnConfig::rmcn(2).with_width_divisor(16), 13).unwrap();
        let cfg_half = TrainConfig {
            epochs: 3,
            ..cfg.clone()
        };
        let report_c1 = train_loop(&model_c, &cfg_half, &pairs, &base.join("c")).unwrap();
        let model_c2: McnModel<f32> =
            McnModel::init(McnConfig::rmcn(2).with_width_divisor(16), 999).unwrap();
        let report_c2 = resume_train_loop(
            &model_c2,
            &cfg,
            &pairs,
            &base.join("c2"),
            &report_c1.state,
        )
        .unwrap();
        let tail_a: Vec<&TrainRow> = report_a.rows.iter().filter(|r| r.epoch >= 3).collect();
        assert_eq!(tail_a.len(), report_c2.rows.len());
        for (a, c) in tail_a.iter().zip(&report_c2.rows) {
            assert_eq!(a.loss, c.loss, "epoch {} step {}", a.epoch, a.step);
        }
        assert_eq!(
            std::fs::read(&report_a.checkpoint).unwrap(),
            std::fs::read(&report_c2.checkpoint).unwrap()
        );
        std::fs::remove_dir_all(&base).ok();
    }

    #[test]
    fn both_passes_feed_sgn1_gradients() {
        let model: McnModel<f32> =
            McnModel::init(McnConfig::rmcn(2).with_width_divisor(16), 3).unwrap();
        let pair = toy_pair(32, 31);
        let outs = model.forward(&pair.packed).unwrap();

        let sgn1_grads_nonzero = |model: &McnModel<f32>| {
            model
                .named_params()
                .iter()
                .filter(|(n, _)| n.starts_with("sgn1."))
                .any(|(_, p)| p.grad().is_some_and(|g| g.iter().any(|&v| v != 0.0)))
        };

        // Loss through the back output only: gradient reaches SGN-1 weights
        // via the siamese back pass.
        model.zero_grads();
        outs.back_output
            .as_ref()
            .unwrap()
            .mean_abs_diff(&pair.target)
            .unwrap()
            .backward()
            .unwrap();
        assert!(sgn1_grads_nonzero(&model));

        // Loss through SGN-2 only: gradient reaches SGN-1 through the
        // cooperative connection and the adapted output.
        model.zero_grads();
        outs.sgn_outputs[1]
            .mean_abs_diff(&pair.target)
            .unwrap()
            .backward()
            .unwrap();
        assert!(sgn1_grads_nonzero(&model));
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig {
            crop: 30,
            ..TrainConfig::default()
        };
        assert!(cfg.validate(2).is_err());
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate(2).is_err());
    }
}
