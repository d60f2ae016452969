//! MSE training of the auto-encoder on aligned window pairs.
//!
//! Batches are a pure function of `(seed, step)`: sample `k` of the run is
//! position `k mod n` of the permutation drawn for epoch `k / n`. A resumed
//! run therefore sees exactly the batches the uninterrupted one would have.

mod checkpoint;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use optim::{adamw_step, clip_grad_norm, grad_norm, lr_at, AdamState, TrainConfig};

use crate::data_io::WindowPair;
use crate::error::{Error, Result};
use crate::model::{ModelWeights, TraceRequest};
use crate::numerics::Graph;
use crate::patching::PatchSequence;

/// Mean of `(pred − target)²` over every token element.
pub fn mse_loss_patches(pred: &PatchSequence, target: &PatchSequence) -> Result<f64> {
    if pred.tokens.len() != target.tokens.len()
        || pred.patch_size != target.patch_size
        || pred.window_size != target.window_size
        || pred.channels != target.channels
    {
        return Err(Error::shape(
            "mse",
            &[pred.window_size, pred.patch_size, pred.channels],
            &[target.window_size, target.patch_size, target.channels],
        ));
    }
    let total: f64 = pred
        .tokens
        .iter()
        .zip(&target.tokens)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(total / pred.tokens.len() as f64)
}

/// Dataset indices used at optimizer step `step` (1-based).
pub fn batch_indices(seed: u64, step: usize, batch: usize, n: usize) -> Vec<usize> {
    let mut perm: Option<(usize, Vec<usize>)> = None;
    (0..batch)
        .map(|j| {
            let k = (step - 1) * batch + j;
            let epoch = k / n;
            if perm.as_ref().map(|(e, _)| *e) != Some(epoch) {
                perm = Some((epoch, epoch_permutation(seed, epoch, n)));
            }
            perm.as_ref().expect("just set").1[k % n]
        })
        .collect()
}

fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Mean batch loss after a forward and backward pass; gradients are left
/// in the weights' parameters (zeroed first).
pub fn batch_loss_and_grads(weights: &mut ModelWeights<f32>, batch: &[&WindowPair]) -> Result<f64> {
    let degraded: Vec<_> = batch.iter().map(|p| &p.degraded).collect();
    let gt: Vec<_> = batch.iter().map(|p| &p.gt).collect();
    let x = weights.input_tokens(&degraded)?;
    let y = weights.target_tokens(&gt)?;
    let mut g = Graph::new();
    let (xi, yi) = (g.input(x), g.input(y));
    let fwd = weights.forward_graph(&mut g, xi, TraceRequest::Off)?;
    let loss = g.mse(fwd.output, yi)?;
    let value = g.value(loss).item() as f64;
    weights.params_mut().zero_grads();
    g.backward(loss, weights.params_mut())?;
    Ok(value)
}

/// Optimizer state plus weights, advanced one step at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    weights: ModelWeights<f32>,
    moments: AdamState,
    config: TrainConfig,
    step: usize,
}

impl Trainer {
    pub fn new(weights: ModelWeights<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let moments = AdamState::zeros(weights.params());
        Ok(Trainer {
            weights,
            moments,
            config,
            step: 0,
        })
    }

    /// Continues from a checkpoint's weights, moments and step counter.
    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        ckpt.train.validate()?;
        let moments = match ckpt.moments {
            Some(m) if m.matches(ckpt.weights.params()) => m,
            Some(_) => return Err(Error::CorruptCheckpoint("moment shapes differ".into())),
            None if ckpt.step == 0 => AdamState::zeros(ckpt.weights.params()),
            None => {
                return Err(Error::InvalidArgument(
                    "checkpoint has no optimizer state, cannot resume mid-run".into(),
                ))
            }
        };
        Ok(Trainer {
            weights: ckpt.weights,
            moments,
            config: ckpt.train,
            step: ckpt.step,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn weights(&self) -> &ModelWeights<f32> {
        &self.weights
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            train: self.config.clone(),
            step: self.step,
            weights: self.weights.clone(),
            moments: Some(self.moments.clone()),
        }
    }

    fn check_data(&self, data: &[WindowPair]) -> Result<()> {
        let s = self.weights.config().window_size;
        if data.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        if let Some(p) = data.iter().find(|p| {
            p.degraded.height() != s
                || p.degraded.width() != s
                || p.gt.height() != s
                || p.gt.width() != s
        }) {
            return Err(Error::shape(
                "training window",
                &[p.degraded.height(), p.degraded.width()],
                &[s, s],
            ));
        }
        Ok(())
    }

    /// One optimizer step; returns the pre-update batch loss.
    pub fn train_step(&mut self, data: &[WindowPair]) -> Result<f64> {
        self.check_data(data)?;
        let t = self.step + 1;
        let idx = batch_indices(self.config.seed, t, self.config.batch_size, data.len());
        let batch: Vec<_> = idx.iter().map(|&i| &data[i]).collect();
        let loss = batch_loss_and_grads(&mut self.weights, &batch)?;
        clip_grad_norm(self.weights.params_mut(), self.config.grad_clip_norm);
        let lr = lr_at(t, &self.config);
        adamw_step(
            self.weights.params_mut(),
            &mut self.moments,
            t,
            lr,
            &self.config,
        )?;
        self.step = t;
        Ok(loss)
    }

    /// Steps until `until` (capped at `total_steps`), calling `on_step` with
    /// the trainer and each step's loss.
    pub fn run<F>(&mut self, data: &[WindowPair], until: usize, mut on_step: F) -> Result<Vec<f64>>
    where
        F: FnMut(&Trainer, f64) -> Result<()>,
    {
        self.check_data(data)?;
        let until = until.min(self.config.total_steps);
        let mut losses = Vec::with_capacity(until.saturating_sub(self.step));
        while self.step < until {
            let loss = self.train_step(data)?;
            losses.push(loss);
            on_step(self, loss)?;
        }
        Ok(losses)
    }
}

/// Trains fresh `model` weights for `cfg.total_steps` steps.
pub fn train(
    model: ModelWeights<f32>,
    data: &[WindowPair],
    cfg: TrainConfig,
) -> Result<(Checkpoint, Vec<f64>)> {
    let mut trainer = Trainer::new(model, cfg)?;
    let total = trainer.config.total_steps;
    let losses = trainer.run(data, total, |_, _| Ok(()))?;
    Ok((trainer.checkpoint(), losses))
}

/// Loss log lines: `step<TAB>loss`.
pub fn format_loss_log(first_step: usize, losses: &[f64]) -> String {
    losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}\t{l:.6}\n", first_step + i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::patching::ImageBuffer;
    use rand::Rng;

    fn seq(tokens: Vec<f32>) -> PatchSequence {
        PatchSequence::new(tokens, 1, 1, 1).unwrap()
    }

    #[test]
    fn mse_examples() {
        let t = PatchSequence::new(vec![0.2; 16], 2, 4, 1).unwrap();
        assert_eq!(mse_loss_patches(&t, &t).unwrap(), 0.0);
        let shifted = PatchSequence::new(vec![0.7; 16], 2, 4, 1).unwrap();
        assert!((mse_loss_patches(&shifted, &t).unwrap() - 0.25).abs() < 1e-6);
        let a = PatchSequence::new(vec![0.0, 1.0, 0.0, 1.0], 1, 2, 1).unwrap();
        let b = PatchSequence::new(vec![1.0, 1.0, 1.0, 1.0], 1, 2, 1).unwrap();
        assert_eq!(mse_loss_patches(&a, &b).unwrap(), 0.5);
        assert!(mse_loss_patches(&seq(vec![0.0]), &t).is_err());
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let n = 10;
        let mut seen: Vec<usize> = (1..=5).flat_map(|s| batch_indices(3, s, 2, n)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        assert_eq!(batch_indices(3, 7, 4, n), batch_indices(3, 7, 4, n));
        assert_ne!(batch_indices(3, 1, 10, n), batch_indices(4, 1, 10, n));
    }

    fn tiny_pairs(count: usize, seed: u64) -> Vec<WindowPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let gt =
                    ImageBuffer::from_fn(8, 8, 1, |_, _, _| f32::from(rng.gen_bool(0.7))).unwrap();
                WindowPair {
                    degraded: gt.to_rgb(),
                    gt,
                }
            })
            .collect()
    }

    fn tiny_model(seed: u64) -> ModelWeights<f32> {
        init_model(&ModelConfig::new(1, 16, 2, 4, 8).unwrap(), seed).unwrap()
    }

    #[test]
    fn batch_loss_ignores_window_order() {
        let data = tiny_pairs(4, 1);
        let mut w = tiny_model(2);
        let fwd: Vec<_> = data.iter().collect();
        let rev: Vec<_> = data.iter().rev().collect();
        let a = batch_loss_and_grads(&mut w, &fwd).unwrap();
        let b = batch_loss_and_grads(&mut w, &rev).unwrap();
        assert!((a - b).abs() < 1e-6 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn constant_pages_fit_below_1e3() {
        // degraded == GT == blank page: the projection bias alone can fit it
        let blank = ImageBuffer::filled(8, 8, 1, 1.0).unwrap();
        let data = vec![
            WindowPair {
                degraded: blank.to_rgb(),
                gt: blank,
            };
            4
        ];
        let cfg = TrainConfig {
            base_lr: 1e-3,
            ..TrainConfig::new(500, 4, 7)
        };
        let (_, losses) = train(tiny_model(3), &data, cfg).unwrap();
        let tail = losses[480..].iter().sum::<f64>() / 20.0;
        assert!(tail < 1e-3, "{tail}");
        assert!(losses[..50].iter().sum::<f64>() > losses[50..100].iter().sum::<f64>());
    }

    #[test]
    fn identity_loss_trends_down() {
        let data = tiny_pairs(16, 5);
        let cfg = TrainConfig {
            base_lr: 3e-3,
            ..TrainConfig::new(500, 4, 7)
        };
        let (ckpt, losses) = train(tiny_model(3), &data, cfg).unwrap();
        assert_eq!(ckpt.step, 500);
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[480..].iter().sum::<f64>() / 20.0;
        assert!(tail < head / 10.0, "{head} -> {tail}");
    }

    #[test]
    fn same_seed_same_history_and_resume_matches() {
        let data = tiny_pairs(6, 9);
        let cfg = TrainConfig::new(30, 4, 11);
        let (full, losses) = train(tiny_model(1), &data, cfg.clone()).unwrap();
        let (_, again) = train(tiny_model(1), &data, cfg.clone()).unwrap();
        assert_eq!(losses, again);

        let mut first = Trainer::new(tiny_model(1), cfg).unwrap();
        first.run(&data, 13, |_, _| Ok(())).unwrap();
        let bytes = first.checkpoint().to_bytes();
        let mut resumed = Trainer::resume(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        let rest = resumed.run(&data, 30, |_, _| Ok(())).unwrap();
        assert_eq!(rest, losses[13..]);
        assert_eq!(resumed.checkpoint(), full);
    }

    #[test]
    fn empty_or_mismatched_data_is_rejected() {
        let mut t = Trainer::new(tiny_model(1), TrainConfig::new(5, 2, 0)).unwrap();
        assert!(matches!(t.train_step(&[]), Err(Error::Dataset(_))));
        let gt = ImageBuffer::filled(16, 16, 1, 1.0).unwrap();
        let wrong = [WindowPair {
            degraded: gt.to_rgb(),
            gt,
        }];
        assert!(t.train_step(&wrong).is_err());
    }

    #[test]
    fn loss_log_format() {
        assert_eq!(
            format_loss_log(1, &[0.5, 0.25]),
            "1\t0.500000\n2\t0.250000\n"
        );
    }
}
