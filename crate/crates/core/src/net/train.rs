use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Label, ScoreSet};
use crate::error::{Error, Result};
use crate::scoring::compute_eer;
use crate::spectral::FeatureMatrix;

use super::checkpoint::Checkpoint;
use super::loss::asoftmax_loss;
use super::model::{Senet, SenetConfig};
use super::optim::Adam;
use super::tensor::{Element, Tensor4};

/// Class index convention: 0 = bonafide, 1 = spoof. Scores are the logit
/// difference `z_bonafide - z_spoof`, so larger means more likely genuine.
pub const CLASS_BONAFIDE: usize = 0;
pub const CLASS_SPOOF: usize = 1;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Angular margin multiplier; 1 disables the margin.
    pub margin: u32,
    /// Margin annealing: lambda = max(lambda_min, lambda_start / (1 + lambda_decay * iter)).
    pub lambda_start: f64,
    pub lambda_min: f64,
    pub lambda_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            batch_size: 8,
            epochs: 32,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 1e-4,
            margin: 4,
            lambda_start: 1000.0,
            lambda_min: 5.0,
            lambda_decay: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.margin == 0 {
            return Err(Error::Config("margin must be >= 1".into()));
        }
        if self.lambda_min < 0.0 || self.lambda_start < self.lambda_min {
            return Err(Error::Config("need lambda_start >= lambda_min >= 0".into()));
        }
        Ok(())
    }

    pub fn lambda_at(&self, iteration: u64) -> f64 {
        (self.lambda_start / (1.0 + self.lambda_decay * iteration as f64)).max(self.lambda_min)
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_eer: f64,
    pub lambda: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// State at the epoch with the lowest dev EER.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_dev_eer: f64,
    pub logs: Vec<EpochLog>,
}

/// Live training state, exposed so callers can resume or inspect.
#[derive(Debug)]
pub struct TrainerState<T> {
    pub net: Senet<T>,
    pub opt: Adam,
    pub iterations: u64,
}

fn batch_tensor<T: Element>(items: &[&FeatureMatrix]) -> Tensor4<T> {
    let (rows, cols) = (items[0].rows, items[0].cols);
    let mut data = Vec::with_capacity(items.len() * rows * cols);
    for m in items {
        data.extend(m.data.iter().map(|&v| T::from64(v)));
    }
    Tensor4::from_vec(items.len(), 1, rows, cols, data)
}

fn check_uniform_dims(sets: &[&[(FeatureMatrix, Label)]]) -> Result<(usize, usize)> {
    let first = sets
        .iter()
        .flat_map(|s| s.iter())
        .next()
        .ok_or_else(|| Error::Training("empty training set".into()))?;
    let dims = (first.0.rows, first.0.cols);
    for (m, _) in sets.iter().flat_map(|s| s.iter()) {
        if (m.rows, m.cols) != dims {
            return Err(Error::Shape(format!(
                "feature `{}` is {}x{}, expected {}x{}",
                m.trial_id, m.rows, m.cols, dims.0, dims.1
            )));
        }
    }
    Ok(dims)
}

/// Train from scratch with per-epoch dev evaluation; keeps the state of the
/// epoch with the lowest dev EER. Fully deterministic for a given seed.
pub fn train<T: Element>(
    net_config: &SenetConfig,
    train_set: &[(FeatureMatrix, Label)],
    dev_set: &[(FeatureMatrix, Label)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dev_set.is_empty() {
        return Err(Error::Training("empty dev set".into()));
    }
    check_uniform_dims(&[train_set, dev_set])?;

    let mut state = TrainerState {
        net: Senet::<T>::new(net_config.clone(), cfg.seed)?,
        opt: Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay),
        iterations: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best: Option<(Checkpoint, usize, f64)> = None;
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut lambda = cfg.lambda_at(state.iterations);
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&FeatureMatrix> = chunk.iter().map(|&i| &train_set[i].0).collect();
            let labels: Vec<usize> = chunk
                .iter()
                .map(|&i| match train_set[i].1 {
                    Label::Bonafide => CLASS_BONAFIDE,
                    Label::Spoof => CLASS_SPOOF,
                })
                .collect();
            let x = batch_tensor::<T>(&items);
            state.net.zero_grad();
            let embed = state.net.forward_embed(&x, true)?;
            lambda = cfg.lambda_at(state.iterations);
            let (loss, grad_embed) = asoftmax_loss(
                &mut state.net.head,
                &embed,
                items.len(),
                &labels,
                cfg.margin,
                lambda,
            );
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, iteration {}",
                    state.iterations
                )));
            }
            state.net.backward_embed(&grad_embed, items.len());
            state.opt.step(&mut state.net);
            state.iterations += 1;
            loss_sum += loss;
            batches += 1;
        }

        let dev_feats: Vec<&FeatureMatrix> = dev_set.iter().map(|(m, _)| m).collect();
        let scores = score_trials(&mut state.net, &dev_feats, cfg.batch_size)?;
        let mut labeled = ScoreSet::new();
        for (m, label) in dev_set {
            let entry = scores.get(&m.trial_id).expect("scored every dev trial");
            labeled.insert(&m.trial_id, entry.score, Some(*label))?;
        }
        let (dev_eer, _) = compute_eer(&labeled)?;

        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            dev_eer,
            lambda,
        });
        let improved = match &best {
            None => true,
            Some((_, _, best_eer)) => dev_eer < *best_eer,
        };
        if improved {
            best = Some((
                Checkpoint::capture(&mut state.net, Some(&state.opt)),
                epoch,
                dev_eer,
            ));
        }
    }

    let (best, best_epoch, best_dev_eer) = best.expect("epochs >= 1");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_dev_eer,
        logs,
    })
}

/// Score trials in eval mode (running batchnorm stats, margin-free logits).
pub fn score_trials<T: Element>(
    net: &mut Senet<T>,
    feats: &[&FeatureMatrix],
    batch_size: usize,
) -> Result<ScoreSet> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut out = ScoreSet::new();
    for chunk in feats.chunks(batch_size) {
        let x = batch_tensor::<T>(chunk);
        let logits = net.forward_logits(&x)?;
        let classes = net.head.classes;
        for (b, m) in chunk.iter().enumerate() {
            let z = &logits[b * classes..(b + 1) * classes];
            let score = z[CLASS_BONAFIDE].to64() - z[CLASS_SPOOF].to64();
            out.insert(&m.trial_id, score, None)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::model::StageSpec;
    use crate::spectral::{FeatureKind, SubbandSpec};
    use rand::Rng;

    fn tiny_net_config() -> SenetConfig {
        SenetConfig {
            in_channels: 1,
            stem_channels: 2,
            stages: vec![
                StageSpec { blocks: 1, channels: 2, stride: 1 },
                StageSpec { blocks: 1, channels: 4, stride: 2 },
            ],
            se_reduction: 2,
            num_classes: 2,
            width_multiplier: 1.0,
        }
    }

    /// Trivially separable features: constant sign encodes the class, plus
    /// deterministic noise.
    fn toy_set(n_per_class: usize, rows: usize, cols: usize, seed: u64) -> Vec<(FeatureMatrix, Label)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..n_per_class {
            for (label, sign) in [(Label::Bonafide, 1.0), (Label::Spoof, -1.0)] {
                let data: Vec<f64> = (0..rows * cols)
                    .map(|_| sign * 1.0 + rng.gen_range(-0.3..0.3))
                    .collect();
                out.push((
                    FeatureMatrix {
                        data,
                        rows,
                        cols,
                        kind: FeatureKind::Lps,
                        band: SubbandSpec::f0(),
                        trial_id: format!("T_{}_{i}", label.as_str()),
                    },
                    label,
                ));
            }
        }
        out
    }

    #[test]
    fn learns_separable_toy_data() {
        let train_set = toy_set(8, 9, 12, 1);
        let dev_set = toy_set(4, 9, 12, 2);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 4,
            lr: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train::<f32>(&tiny_net_config(), &train_set, &dev_set, &cfg).unwrap();
        assert_eq!(out.logs.len(), 10);
        assert!(out.best_dev_eer <= 0.05, "dev EER {}", out.best_dev_eer);
        assert!(out.best_epoch >= 1 && out.best_epoch <= 10);
        // loss should trend down
        assert!(out.logs.last().unwrap().train_loss < out.logs[0].train_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let train_set = toy_set(4, 8, 10, 3);
        let dev_set = toy_set(2, 8, 10, 4);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train::<f32>(&tiny_net_config(), &train_set, &dev_set, &cfg).unwrap();
        let b = train::<f32>(&tiny_net_config(), &train_set, &dev_set, &cfg).unwrap();
        assert_eq!(a.best_dev_eer.to_bits(), b.best_dev_eer.to_bits());
        for (la, lb) in a.logs.iter().zip(&b.logs) {
            assert_eq!(la.train_loss.to_bits(), lb.train_loss.to_bits());
            assert_eq!(la.dev_eer.to_bits(), lb.dev_eer.to_bits());
        }
        // best checkpoints bitwise identical
        assert_eq!(a.best.tensors, b.best.tensors);
    }

    #[test]
    fn lambda_anneals_down_to_floor() {
        let cfg = TrainConfig::default();
        assert!((cfg.lambda_at(0) - 1000.0).abs() < 1e-9);
        assert!(cfg.lambda_at(10) < cfg.lambda_at(1));
        assert!((cfg.lambda_at(1_000_000) - cfg.lambda_min).abs() < 1e-9);
    }

    #[test]
    fn mismatched_feature_shapes_are_rejected() {
        let mut train_set = toy_set(2, 8, 10, 5);
        train_set.push({
            let mut odd = toy_set(1, 6, 10, 6).pop().unwrap();
            odd.0.trial_id = "ODD".into();
            odd
        });
        let dev_set = toy_set(1, 8, 10, 7);
        let err = train::<f32>(
            &tiny_net_config(),
            &train_set,
            &dev_set,
            &TrainConfig { epochs: 1, ..TrainConfig::default() },
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("ODD"), "{err}");
    }

    #[test]
    fn score_convention_is_bonafide_minus_spoof() {
        let mut net = Senet::<f32>::new(tiny_net_config(), 2).unwrap();
        let set = toy_set(1, 8, 10, 8);
        let feats: Vec<&FeatureMatrix> = set.iter().map(|(m, _)| m).collect();
        let scores = score_trials(&mut net, &feats, 4).unwrap();
        let x = batch_tensor::<f32>(&feats);
        let logits = net.forward_logits(&x).unwrap();
        for (b, m) in feats.iter().enumerate() {
            let want = logits[b * 2] as f64 - logits[b * 2 + 1] as f64;
            assert!((scores.get(&m.trial_id).unwrap().score - want).abs() < 1e-12);
        }
    }
}
