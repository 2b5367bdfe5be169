use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::block::SeBlock;
use super::layers::{global_avg_pool, global_avg_pool_backward, BatchNorm2d, Conv2d, MaxPool2d, Relu};
use super::loss::AngularHead;
use super::tensor::{Element, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenetConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    pub se_reduction: usize,
    pub num_classes: usize,
    /// Channel widths are scaled by this factor (min 1 per layer); 1.0 is the
    /// full-size network, smaller values give desk-scale models.
    pub width_multiplier: f64,
}

impl Default for SenetConfig {
    fn default() -> Self {
        SenetConfig {
            in_channels: 1,
            stem_channels: 16,
            stages: vec![
                StageSpec { blocks: 3, channels: 16, stride: 1 },
                StageSpec { blocks: 4, channels: 32, stride: 2 },
                StageSpec { blocks: 6, channels: 64, stride: 1 },
                StageSpec { blocks: 3, channels: 128, stride: 2 },
            ],
            se_reduction: 16,
            num_classes: 2,
            width_multiplier: 1.0,
        }
    }
}

impl SenetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem_channels == 0 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.channels == 0 || s.stride == 0 {
                return Err(Error::Config(format!("stage {i} has a zero field")));
            }
        }
        if self.se_reduction == 0 {
            return Err(Error::Config("se_reduction must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if !(self.width_multiplier > 0.0) || !self.width_multiplier.is_finite() {
            return Err(Error::Config("width_multiplier must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_multiplier).round() as usize).max(1)
    }

    /// Embedding width after global average pooling.
    pub fn embed_dim(&self) -> usize {
        self.scaled(self.stages.last().expect("validated config").channels)
    }
}

/// SE-ResNet feature extractor with an angular-margin head.
#[derive(Debug, Clone)]
pub struct Senet<T> {
    pub config: SenetConfig,
    pub stem_conv: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    stem_relu: Relu,
    stem_pool: MaxPool2d,
    pub blocks: Vec<SeBlock<T>>,
    pub head: AngularHead<T>,
    last_spatial: Option<(usize, usize)>,
}

impl<T: Element> Senet<T> {
    /// Build and initialize deterministically from `seed` (uniform Kaiming
    /// fan-in bounds).
    pub fn new(config: SenetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let stem_c = config.scaled(config.stem_channels);
        let mut blocks = Vec::new();
        let mut in_c = stem_c;
        for stage in &config.stages {
            let out_c = config.scaled(stage.channels);
            for b in 0..stage.blocks {
                let stride = if b == 0 { stage.stride } else { 1 };
                blocks.push(SeBlock::new(in_c, out_c, stride, config.se_reduction));
                in_c = out_c;
            }
        }
        let mut net = Senet {
            stem_conv: Conv2d::new(config.in_channels, stem_c, 7, 2, 3),
            stem_bn: BatchNorm2d::new(stem_c),
            stem_relu: Relu::new(),
            stem_pool: MaxPool2d::new(3, 2, 1),
            head: AngularHead::new(config.num_classes, in_c),
            blocks,
            config,
            last_spatial: None,
        };
        // Biases and batchnorm offsets stay zero, gains stay one; weights get
        // uniform fan-in bounds in a fixed traversal order for determinism.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_conv(&mut net.stem_conv, &mut rng);
        for block in &mut net.blocks {
            init_conv(&mut block.conv1, &mut rng);
            init_conv(&mut block.conv2, &mut rng);
            init_linear_weights(&mut block.fc1.weight, block.fc1.in_dim, &mut rng);
            init_linear_weights(&mut block.fc2.weight, block.fc2.in_dim, &mut rng);
            if let Some((conv, _)) = &mut block.downsample {
                init_conv(conv, &mut rng);
            }
        }
        init_linear_weights(&mut net.head.weight, net.head.dim, &mut rng);
        Ok(net)
    }

    pub fn embed_dim(&self) -> usize {
        self.head.dim
    }

    /// Run the backbone: (n, in_c, h, w) -> (n, embed_dim) embeddings.
    pub fn forward_embed(&mut self, x: &Tensor4<T>, train: bool) -> Result<Vec<T>> {
        let h = self.stem_conv.forward(x, train)?;
        let h = self.stem_bn.forward(&h, train)?;
        let h = self.stem_relu.forward(&h, train);
        let mut h = self.stem_pool.forward(&h, train)?;
        for block in &mut self.blocks {
            h = block.forward(&h, train)?;
        }
        self.last_spatial = Some((h.h, h.w));
        Ok(global_avg_pool(&h).data)
    }

    /// Margin-free class scores for evaluation (running batchnorm stats).
    pub fn forward_logits(&mut self, x: &Tensor4<T>) -> Result<Vec<T>> {
        let embed = self.forward_embed(x, false)?;
        Ok(self.head.logits(&embed, x.n))
    }

    /// Backpropagate a gradient w.r.t. the pooled embeddings. Head gradients
    /// are handled by the loss; this covers the backbone.
    pub fn backward_embed(&mut self, grad_embed: &[T], batch: usize) -> Tensor4<T> {
        let (h, w) = self.last_spatial.take().expect("backward without forward");
        let g = Tensor4::from_vec(batch, self.embed_dim(), 1, 1, grad_embed.to_vec());
        let mut g = global_avg_pool_backward(&g, h, w);
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g);
        }
        let g = self.stem_pool.backward(&g);
        let g = self.stem_relu.backward(&g);
        let g = self.stem_bn.backward(&g);
        self.stem_conv.backward(&g)
    }

    pub fn zero_grad(&mut self) {
        self.stem_conv.zero_grad();
        self.stem_bn.zero_grad();
        for block in &mut self.blocks {
            block.zero_grad();
        }
        self.head.zero_grad();
    }

    /// Visit every learnable parameter as (name, data, grad, weight_decay).
    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Vec<T>, &mut Vec<T>, bool)) {
        f(
            "stem_conv.weight".into(),
            &mut self.stem_conv.weight,
            &mut self.stem_conv.grad_weight,
            true,
        );
        f(
            "stem_conv.bias".into(),
            &mut self.stem_conv.bias,
            &mut self.stem_conv.grad_bias,
            false,
        );
        f(
            "stem_bn.gamma".into(),
            &mut self.stem_bn.gamma,
            &mut self.stem_bn.grad_gamma,
            false,
        );
        f(
            "stem_bn.beta".into(),
            &mut self.stem_bn.beta,
            &mut self.stem_bn.grad_beta,
            false,
        );
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_params(&format!("block{i}"), f);
        }
        f(
            "head.weight".into(),
            &mut self.head.weight,
            &mut self.head.grad_weight,
            true,
        );
    }

    /// Visit non-learnable state (batchnorm running statistics).
    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(String, &mut Vec<T>)) {
        f("stem_bn.running_mean".into(), &mut self.stem_bn.running_mean);
        f("stem_bn.running_var".into(), &mut self.stem_bn.running_var);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_buffers(&format!("block{i}"), f);
        }
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, data, _, _| n += data.len());
        n
    }
}

fn init_conv<T: Element>(conv: &mut Conv2d<T>, rng: &mut ChaCha8Rng) {
    let fan_in = conv.in_c * conv.k * conv.k;
    let bound = (6.0 / fan_in as f64).sqrt();
    for w in conv.weight.iter_mut() {
        *w = T::from64(rng.gen_range(-bound..bound));
    }
}

fn init_linear_weights<T: Element>(weight: &mut [T], fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for w in weight.iter_mut() {
        *w = T::from64(rng.gen_range(-bound..bound));
    }
}
