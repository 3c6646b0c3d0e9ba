use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{derive_seed, prepare_slice, PreparedSlice};
use super::{Checkpoint, RmsProp, TrainConfig};
use crate::error::{Error, Result};
use crate::fourier::ComplexImage;
use crate::io::{read_csv, write_csv, MetricRow};
use crate::metrics::{slice_metrics, MetricReport, SliceMetrics};
use crate::models::{Batch, KvNet, ModelConfig};
use crate::sampling::{generate_random_mask, Mask};
use crate::tensor::{Graph, ParamStore, Real, Var};

const TAG_INIT: u64 = 0;
const TAG_TRAIN_MASK: u64 = 1;
const TAG_VAL_MASK: u64 = 2;
const TAG_SHUFFLE: u64 = 3;

/// `1 - mean SSIM` over the batch.
pub fn ssim_loss<F: Real>(g: &mut Graph<F>, out: Var, targets: &[F], ranges: &[F]) -> Result<Var> {
    let s = g.ssim(out, targets, ranges)?;
    Ok(g.affine(s, -F::one(), F::one()))
}

/// How to turn masked k-space into a magnitude image.
#[derive(Clone, Copy, Debug)]
pub enum Reconstructor<'a, F> {
    ZeroFill,
    Model { net: &'a KvNet, params: &'a ParamStore<F> },
}

fn batch_of<F: Real>(slices: &[PreparedSlice<F>]) -> Result<Batch<F>> {
    let ks: Vec<_> = slices.iter().map(|s| &s.k_masked).collect();
    let ms: Vec<_> = slices.iter().map(|s| &s.mask).collect();
    Batch::from_slices(&ks, &ms)
}

fn targets_of<F: Real>(slices: &[PreparedSlice<F>]) -> (Vec<F>, Vec<F>) {
    let targets = slices.iter().flat_map(|s| s.target.iter().copied()).collect();
    let ranges = slices.iter().map(PreparedSlice::target_range).collect();
    (targets, ranges)
}

/// Metrics of normalised network outputs against the original-unit truth.
fn score<F: Real>(outputs: &[F], slices: &[PreparedSlice<F>]) -> Result<Vec<SliceMetrics>> {
    let hw = slices[0].height() * slices[0].width();
    slices
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let recon: Vec<F> = outputs[i * hw..(i + 1) * hw].iter().map(|&v| v * s.scale).collect();
            slice_metrics(&recon, &s.truth, s.height(), s.width())
        })
        .collect()
}

/// Average metrics of a reconstructor over prepared slices, in original units.
pub fn evaluate<F: Real>(
    recon: Reconstructor<'_, F>,
    slices: &[PreparedSlice<F>],
    batch_size: usize,
) -> Result<MetricReport> {
    if slices.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut all = Vec::with_capacity(slices.len());
    for chunk in slices.chunks(batch_size.max(1)) {
        match recon {
            Reconstructor::ZeroFill => {
                for s in chunk {
                    let h = s.height();
                    all.push(slice_metrics(&s.zero_fill_magnitude(), &s.truth, h, s.width())?);
                }
            }
            Reconstructor::Model { net, params } => {
                let batch = batch_of(chunk)?;
                let mut g = Graph::new();
                let out = net.forward(&mut g, params, &batch)?;
                all.extend(score(g.value(out).data(), chunk)?);
            }
        }
    }
    MetricReport::from_slices(&all)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Split {
    Train,
    Val,
}

/// Outcome of `Trainer::fit`.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub zero_fill: MetricReport,
    pub final_val: MetricReport,
    pub best_val_ssim: f64,
    pub history: Vec<MetricRow>,
}

fn row(epoch: usize, split: &str, m: &MetricReport, loss: f64) -> MetricRow {
    MetricRow {
        epoch,
        split: split.into(),
        nmse: m.nmse,
        psnr: m.psnr,
        ssim: m.ssim,
        loss,
    }
}

/// Single-precision training loop with deterministic shuffling, masks and
/// checkpoints. `epochs_done` counts completed epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: KvNet,
    pub params: ParamStore<f32>,
    pub optimizer: RmsProp<f32>,
    pub config: TrainConfig,
    pub epochs_done: usize,
    pub best_val_ssim: Option<f64>,
    pub history: Vec<MetricRow>,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = KvNet::new(model)?;
        let params = net.init_params(derive_seed(config.seed, &[TAG_INIT]))?;
        Ok(Self {
            net,
            params,
            optimizer: RmsProp::new(config.rmsprop_rho, config.rmsprop_eps),
            config,
            epochs_done: 0,
            best_val_ssim: None,
            history: Vec::new(),
        })
    }

    /// Continues from a checkpoint. Without stored optimizer state the
    /// optimizer starts fresh.
    pub fn from_checkpoint(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = ckpt
            .optimizer
            .unwrap_or_else(|| RmsProp::new(config.rmsprop_rho, config.rmsprop_eps));
        Ok(Self {
            net: KvNet::new(ckpt.config)?,
            params: ckpt.params,
            optimizer,
            config,
            epochs_done: ckpt.epoch,
            best_val_ssim: ckpt.best_val_ssim,
            history: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.net.config.clone(),
            epoch: self.epochs_done,
            best_val_ssim: self.best_val_ssim,
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
        }
    }

    fn mask(&self, split: Split, index: usize, epoch: usize, width: usize) -> Result<Mask> {
        let seed = match split {
            Split::Train if self.config.rerandomize_masks => {
                derive_seed(self.config.seed, &[TAG_TRAIN_MASK, index as u64, epoch as u64 + 1])
            }
            Split::Train => derive_seed(self.config.seed, &[TAG_TRAIN_MASK, index as u64, 0]),
            Split::Val => derive_seed(self.config.seed, &[TAG_VAL_MASK, index as u64]),
        };
        generate_random_mask(width, self.config.center_fraction, self.config.acceleration, seed)
    }

    fn prepare(&self, kspaces: &[ComplexImage<f32>], split: Split, epoch: usize) -> Result<Vec<PreparedSlice<f32>>> {
        kspaces
            .iter()
            .enumerate()
            .map(|(i, k)| {
                self.net.config.check_extent(k.height(), k.width())?;
                prepare_slice(k, self.mask(split, i, epoch, k.width())?)
            })
            .collect()
    }

    /// Validation slices with the fixed validation masks.
    pub fn prepare_validation(&self, kspaces: &[ComplexImage<f32>]) -> Result<Vec<PreparedSlice<f32>>> {
        self.prepare(kspaces, Split::Val, 0)
    }

    /// One pass over `train` in a seeded order. Returns metrics of the
    /// training outputs and the mean batch loss.
    pub fn train_epoch(&mut self, train: &[PreparedSlice<f32>]) -> Result<(MetricReport, f64)> {
        let epoch = self.epochs_done;
        let lr = self.config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[TAG_SHUFFLE, epoch as u64],
        )));
        let mut metrics = Vec::with_capacity(train.len());
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let chunk: Vec<PreparedSlice<f32>> = idx.iter().map(|&i| train[i].clone()).collect();
            let batch = batch_of(&chunk)?;
            let (targets, ranges) = targets_of(&chunk);
            let mut g = Graph::new();
            let out = self.net.forward(&mut g, &self.params, &batch)?;
            let loss = ssim_loss(&mut g, out, &targets, &ranges)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("training loss at epoch {} batch {b}", epoch + 1),
                });
            }
            metrics.extend(score(g.value(out).data(), &chunk)?);
            g.backward(loss)?;
            self.params.zero_grad();
            g.accumulate_param_grads(&mut self.params);
            self.optimizer.step(&mut self.params, lr)?;
            loss_sum += lv as f64;
            batches += 1;
        }
        self.epochs_done += 1;
        Ok((MetricReport::from_slices(&metrics)?, loss_sum / batches.max(1) as f64))
    }

    /// Trains until `config.epochs` epochs are complete. With `out_dir`,
    /// writes `metrics.csv`, `last.ckpt` after every epoch and `best.ckpt`
    /// whenever validation SSIM improves. `on_epoch` sees each epoch's rows.
    pub fn fit(
        &mut self,
        train_k: &[ComplexImage<f32>],
        val_k: &[ComplexImage<f32>],
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&[MetricRow]),
    ) -> Result<TrainSummary> {
        if train_k.is_empty() || val_k.is_empty() {
            return Err(Error::invalid("training and validation sets must be non-empty"));
        }
        let val = self.prepare(val_k, Split::Val, 0)?;
        let zero_fill = evaluate(Reconstructor::ZeroFill, &val, self.config.batch_size)?;
        if self.epochs_done > 0 {
            if let Some(dir) = out_dir {
                let csv = dir.join("metrics.csv");
                if csv.exists() {
                    self.history = read_csv(&csv)?
                        .into_iter()
                        .filter(|r| r.epoch <= self.epochs_done)
                        .collect();
                }
            }
        }
        if self.history.is_empty() {
            self.history.push(row(0, "zerofill", &zero_fill, 1.0 - zero_fill.ssim));
        }
        let mut train = self.prepare(train_k, Split::Train, self.epochs_done)?;
        let mut final_val = None;
        while self.epochs_done < self.config.epochs {
            if self.config.rerandomize_masks {
                train = self.prepare(train_k, Split::Train, self.epochs_done)?;
            }
            let (train_report, loss) = self.train_epoch(&train)?;
            let params = &self.params;
            let val_report = evaluate(
                Reconstructor::Model { net: &self.net, params },
                &val,
                self.config.batch_size,
            )?;
            let epoch = self.epochs_done;
            let rows = [
                row(epoch, "train", &train_report, loss),
                row(epoch, "val", &val_report, 1.0 - val_report.ssim),
            ];
            self.history.extend(rows.iter().cloned());
            let improved = self.best_val_ssim.is_none_or(|b| val_report.ssim > b);
            if improved {
                self.best_val_ssim = Some(val_report.ssim);
            }
            if let Some(dir) = out_dir {
                let ckpt = self.checkpoint();
                if improved {
                    super::write_checkpoint(&dir.join("best.ckpt"), &ckpt)?;
                }
                super::write_checkpoint(&dir.join("last.ckpt"), &ckpt)?;
                write_csv(&dir.join("metrics.csv"), &self.history)?;
            }
            on_epoch(&rows);
            final_val = Some(val_report);
        }
        let final_val = match final_val {
            Some(v) => v,
            None => evaluate(
                Reconstructor::Model {
                    net: &self.net,
                    params: &self.params,
                },
                &val,
                self.config.batch_size,
            )?,
        };
        if let Some(dir) = out_dir {
            write_csv(&dir.join("metrics.csv"), &self.history)?;
        }
        Ok(TrainSummary {
            zero_fill,
            final_val,
            best_val_ssim: self.best_val_ssim.unwrap_or(final_val.ssim),
            history: self.history.clone(),
        })
    }
}
