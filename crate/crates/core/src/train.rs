//! Training loop: focal loss, Adam, plateau learning-rate decay, early
//! stopping on validation F1 and best-weight restoration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Passage};
use crate::metrics::{Evaluator, MetricsError, MetricsReport, PeakConfig};
use crate::model::{ModelError, Vader, VaderConfig};
use crate::nn::{adam_step, focal_loss, AdamConfig, Gradients, LossConfig, NnError, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the {0} set is empty")]
    EmptyFold(&'static str),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub stop_patience: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            batch_size: 16,
            initial_lr: 0.001,
            plateau_patience: 3,
            lr_factor: 0.3,
            stop_patience: 6,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.max_epochs > 0
            && self.batch_size > 0
            && self.initial_lr > 0.0
            && self.plateau_patience > 0
            && self.lr_factor > 0.0
            && self.lr_factor < 1.0
            && self.stop_patience >= self.plateau_patience;
        if !ok {
            return Err(TrainError::InvalidSchedule(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Plateau decay and early stopping driven by one improvement signal, with
/// independent counters.
#[derive(Debug, Clone)]
pub struct ScheduleController {
    schedule: TrainSchedule,
    lr: f64,
    best: Option<(usize, f64)>,
    since_plateau: usize,
    since_stop: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub improved: bool,
    pub stop: bool,
}

impl ScheduleController {
    pub fn new(schedule: &TrainSchedule) -> Self {
        Self {
            schedule: schedule.clone(),
            lr: schedule.initial_lr,
            best: None,
            since_plateau: 0,
            since_stop: 0,
        }
    }

    /// Learning rate for the next epoch.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    /// Records the validation F1 of `epoch`.
    pub fn observe(&mut self, epoch: usize, f1: f64) -> Step {
        let improved = self.best.is_none_or(|(_, b)| f1 > b);
        if improved {
            self.best = Some((epoch, f1));
            self.since_plateau = 0;
            self.since_stop = 0;
        } else {
            self.since_plateau += 1;
            self.since_stop += 1;
            if self.since_plateau >= self.schedule.plateau_patience {
                self.lr *= self.schedule.lr_factor;
                self.since_plateau = 0;
            }
        }
        let stop = self.since_stop >= self.schedule.stop_patience || epoch + 1 >= self.schedule.max_epochs;
        Step { improved, stop }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_f1,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.6},{:.9}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_f1, e.lr
            ));
        }
        out
    }
}

/// One (passage, sensor) training example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub passage_id: String,
    pub sensor_id: String,
    pub input: Tensor<f32>,
    pub labels: Vec<f32>,
    pub label_indices: Vec<usize>,
    pub velocities: Vec<f64>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Builds one sample per sensor channel of every passage.
pub fn prepare_samples(model: &Vader, passages: &[&Passage]) -> Result<Vec<Sample>, TrainError> {
    let mut out = Vec::new();
    for p in passages {
        for (ci, ch) in p.channels.iter().enumerate() {
            let lv = p.label_vector(ci)?;
            let (label_indices, velocities) = p.label_indices(ci)?;
            out.push(Sample {
                passage_id: p.passage_id.clone(),
                sensor_id: ch.sensor_id.clone(),
                input: model.input_tensor(&ch.samples),
                labels: lv.bits.iter().map(|&b| b as f32).collect(),
                label_indices,
                velocities,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub members: Vec<usize>,
    pub padded_len: usize,
    /// One row per member; `true` marks real samples.
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().flatten().filter(|m| **m).count()
    }
}

/// Shuffled batches over series of the given lengths.
pub fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|members| {
            let padded_len = members.iter().map(|&i| lengths[i]).max().unwrap_or(0);
            let mask = members
                .iter()
                .map(|&i| (0..padded_len).map(|t| t < lengths[i]).collect())
                .collect();
            Batch {
                members: members.to_vec(),
                padded_len,
                mask,
            }
        })
        .collect()
}

/// Focal loss over a zero-padded batch laid out member after member.
pub fn padded_batch_loss(
    probs: &[Vec<f32>],
    labels: &[Vec<f32>],
    batch: &Batch,
    loss: &LossConfig,
) -> Result<f64, NnError> {
    let flat = |rows: &[Vec<f32>]| -> Vec<f32> {
        rows.iter()
            .flat_map(|r| r.iter().copied().chain(std::iter::repeat(0.0)).take(batch.padded_len))
            .collect()
    };
    let mask: Vec<bool> = batch.mask.iter().flatten().copied().collect();
    Ok(focal_loss(&flat(probs), &flat(labels), &mask, loss)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub seed: u64,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub peaks: PeakConfig,
    pub verbose: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            peaks: PeakConfig::default(),
            verbose: false,
        }
    }
}

/// One pass over the training samples; returns the mean batch loss.
fn run_epoch(
    model: &mut Vader,
    samples: &[Sample],
    batch_size: usize,
    lr: f64,
    opts: &TrainOptions,
    rng: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    let lengths: Vec<usize> = samples.iter().map(Sample::len).collect();
    let batches = make_batches(&lengths, batch_size, rng);
    let mut total = 0.0;
    for batch in &batches {
        // Members run at their own length so padding never reaches the
        // network; each member's share of the batch mean is weighted by its
        // count of valid samples.
        let count = batch.valid_count() as f64;
        let mut grads = Gradients::zeros_like(model.network.params());
        let mut batch_loss = 0.0;
        for &i in &batch.members {
            let s = &samples[i];
            let (y, cache) = model.network.forward(&s.input)?;
            let mask = vec![true; s.len()];
            let (l, g) = focal_loss(y.data(), &s.labels, &mask, &opts.loss)?;
            let w = s.len() as f64 / count;
            batch_loss += l * w;
            let upstream = Tensor::from_vec(y.shape(), g.iter().map(|&v| v * w as f32).collect())?;
            let (gi, _) = model.network.backward(&cache, &upstream)?;
            grads.accumulate(&gi)?;
        }
        adam_step(model.network.params_mut(), &grads, lr, &opts.adam)?;
        total += batch_loss;
    }
    Ok(total / batches.len() as f64)
}

/// Mean focal loss and F1 at 200 cm over the samples.
pub fn validate(model: &Vader, samples: &[Sample], opts: &TrainOptions) -> Result<(f64, MetricsReport), TrainError> {
    let mut ev = Evaluator::new();
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for s in samples {
        let probs = model.infer_tensor(&s.input)?;
        let mask = vec![true; s.len()];
        let (l, _) = focal_loss(
            &probs,
            &s.labels.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &mask,
            &opts.loss,
        )?;
        loss_sum += l * s.len() as f64;
        count += s.len();
        ev.add(&s.sensor_id, &probs, &s.label_indices, &s.velocities, &opts.peaks)?;
    }
    Ok((loss_sum / count.max(1) as f64, ev.report()))
}

/// Trains with a caller-supplied validation step returning `(loss, f1)`.
pub fn train_with_validator<V>(
    mut model: Vader,
    train: &[Sample],
    schedule: &TrainSchedule,
    opts: &TrainOptions,
    mut validator: V,
) -> Result<(Vader, History), TrainError>
where
    V: FnMut(&Vader, usize) -> Result<(f64, f64), TrainError>,
{
    schedule.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyFold("training"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut ctl = ScheduleController::new(schedule);
    let mut history = History::default();
    let mut best_params = model.network.params().clone();
    for epoch in 0..schedule.max_epochs {
        let lr = ctl.lr();
        let train_loss = run_epoch(&mut model, train, schedule.batch_size, lr, opts, &mut rng)?;
        let (val_loss, val_f1) = validator(&model, epoch)?;
        let step = ctl.observe(epoch, val_f1);
        if step.improved {
            best_params = model.network.params().clone();
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_f1,
            lr,
        };
        if opts.verbose {
            eprintln!("epoch {epoch:3} loss {train_loss:.5} val_loss {val_loss:.5} val_f1 {val_f1:6.2} lr {lr:.2e}");
        }
        history.epochs.push(rec);
        if step.stop {
            break;
        }
    }
    *model.network.params_mut() = best_params;
    history.best_epoch = ctl.best().map(|b| b.0);
    Ok((model, history))
}

/// Trains a fresh model on `train` and monitors F1 at 200 cm on `val`.
pub fn train(
    cfg: &VaderConfig,
    train: &[Sample],
    val: &[Sample],
    schedule: &TrainSchedule,
    opts: &TrainOptions,
) -> Result<(Vader, History), TrainError> {
    if val.is_empty() {
        return Err(TrainError::EmptyFold("validation"));
    }
    let model = Vader::new(*cfg, opts.seed)?;
    train_with_validator(model, train, schedule, opts, |m, _| {
        let (loss, report) = validate(m, val, opts)?;
        Ok((loss, report.f1_200))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_padding_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(&[100, 120], 2, &mut rng);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].padded_len, 120);
        assert_eq!(b[0].valid_count(), 220);
        let single = make_batches(&[5, 9, 7], 1, &mut rng);
        assert!(single.iter().all(|b| b.valid_count() == b.padded_len));
    }

    #[test]
    fn padded_loss_equals_pooled_unpadded_loss() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lengths = [40, 17, 33, 40, 8];
        let probs: Vec<Vec<f32>> = lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                (0..n)
                    .map(|t| 0.05 + 0.9 * (((t * 7 + i * 13) % 23) as f32 / 23.0))
                    .collect()
            })
            .collect();
        let labels: Vec<Vec<f32>> = lengths
            .iter()
            .map(|&n| (0..n).map(|t| if t % 9 == 0 { 1.0 } else { 0.0 }).collect())
            .collect();
        for batch in make_batches(&lengths, 3, &mut rng) {
            let p: Vec<Vec<f32>> = batch.members.iter().map(|&i| probs[i].clone()).collect();
            let l: Vec<Vec<f32>> = batch.members.iter().map(|&i| labels[i].clone()).collect();
            let padded = padded_batch_loss(&p, &l, &batch, &cfg).unwrap();
            let mut sum = 0.0;
            let mut n = 0;
            for (pi, li) in p.iter().zip(&l) {
                let (loss, _) = focal_loss(pi, li, &vec![true; pi.len()], &cfg).unwrap();
                sum += loss * pi.len() as f64;
                n += pi.len();
            }
            assert!((padded - sum / n as f64).abs() <= 1e-6);
        }
    }

    #[test]
    fn plateau_then_stop() {
        let s = TrainSchedule::default();
        let mut c = ScheduleController::new(&s);
        let trace = [10.0, 20.0, 30.0, 40.0, 40.0, 40.0, 40.0, 40.0, 40.0, 40.0];
        let mut lrs = Vec::new();
        let mut stopped = None;
        for (e, &f) in trace.iter().enumerate() {
            lrs.push(c.lr());
            if c.observe(e, f).stop {
                stopped = Some(e);
                break;
            }
        }
        // Epochs 4..6 (0-based) are flat, so epoch 7 runs at 0.0003.
        assert!((lrs[7] - 0.0003).abs() < 1e-15);
        assert!(lrs[..7].iter().all(|&l| l == 0.001));
        assert_eq!(stopped, Some(9));
        assert_eq!(c.best(), Some((3, 40.0)));
    }

    #[test]
    fn schedule_validation() {
        let bad = TrainSchedule {
            stop_patience: 2,
            ..TrainSchedule::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainSchedule::default().validate().is_ok());
    }
}
