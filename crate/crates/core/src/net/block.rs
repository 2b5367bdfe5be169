use crate::error::Result;

use super::layers::{
    global_avg_pool, global_avg_pool_backward, BatchNorm2d, Conv2d, Linear, Relu,
};
use super::tensor::{Element, Tensor4};

/// Residual block with squeeze-and-excitation channel gating:
/// conv-bn-relu-conv-bn, channelwise gate from globally pooled statistics,
/// shortcut add, relu.
#[derive(Debug, Clone)]
pub struct SeBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub downsample: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    relu1: Relu,
    relu_out: Relu,
    cache: Option<SeCache<T>>,
}

#[derive(Debug, Clone)]
struct SeCache<T> {
    branch: Tensor4<T>,
    gate: Vec<f64>,
    fc_mask: Vec<bool>,
}

impl<T: Element> SeBlock<T> {
    pub fn new(in_c: usize, out_c: usize, stride: usize, se_reduction: usize) -> Self {
        let hidden = (out_c / se_reduction).max(1);
        let downsample = if stride != 1 || in_c != out_c {
            Some((Conv2d::new(in_c, out_c, 1, stride, 0), BatchNorm2d::new(out_c)))
        } else {
            None
        };
        SeBlock {
            conv1: Conv2d::new(in_c, out_c, 3, stride, 1),
            bn1: BatchNorm2d::new(out_c),
            conv2: Conv2d::new(out_c, out_c, 3, 1, 1),
            bn2: BatchNorm2d::new(out_c),
            fc1: Linear::new(out_c, hidden),
            fc2: Linear::new(hidden, out_c),
            downsample,
            relu1: Relu::new(),
            relu_out: Relu::new(),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        let identity = match &mut self.downsample {
            Some((conv, bn)) => {
                let y = conv.forward(x, train)?;
                bn.forward(&y, train)?
            }
            None => x.clone(),
        };
        let h1 = self.conv1.forward(x, train)?;
        let h1 = self.bn1.forward(&h1, train)?;
        let h1 = self.relu1.forward(&h1, train);
        let branch = self.conv2.forward(&h1, train)?;
        let branch = self.bn2.forward(&branch, train)?;

        let squeeze = global_avg_pool(&branch);
        let z = self.fc1.forward(&squeeze.data, branch.n, train);
        let mut fc_mask = vec![false; z.len()];
        let mut zr = z;
        for (i, v) in zr.iter_mut().enumerate() {
            if *v > T::zero() {
                fc_mask[i] = true;
            } else {
                *v = T::zero();
            }
        }
        let pre_gate = self.fc2.forward(&zr, branch.n, train);
        let gate: Vec<f64> = pre_gate
            .iter()
            .map(|v| 1.0 / (1.0 + (-v.to64()).exp()))
            .collect();

        let mut out = Tensor4::zeros(branch.n, branch.c, branch.h, branch.w);
        let plane = branch.h * branch.w;
        for n in 0..branch.n {
            for c in 0..branch.c {
                let g = gate[n * branch.c + c];
                let p = branch.plane(n, c);
                for i in 0..plane {
                    out.data[p + i] =
                        T::from64(branch.data[p + i].to64() * g + identity.data[p + i].to64());
                }
            }
        }
        let out = self.relu_out.forward(&out, train);
        if train {
            self.cache = Some(SeCache {
                branch,
                gate,
                fc_mask,
            });
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Tensor4<T> {
        let cache = self.cache.take().expect("se block backward without forward");
        let g = self.relu_out.backward(grad_out);
        let branch = &cache.branch;
        let plane = branch.h * branch.w;

        // Scaled-branch path: d branch = g * gate, d gate = sum(g * branch).
        let mut dbranch = Tensor4::zeros(branch.n, branch.c, branch.h, branch.w);
        let mut dgate = vec![T::zero(); branch.n * branch.c];
        for n in 0..branch.n {
            for c in 0..branch.c {
                let gv = cache.gate[n * branch.c + c];
                let p = branch.plane(n, c);
                let mut s = 0.0f64;
                for i in 0..plane {
                    let gi = g.data[p + i].to64();
                    dbranch.data[p + i] = T::from64(gi * gv);
                    s += gi * branch.data[p + i].to64();
                }
                dgate[n * branch.c + c] = T::from64(s);
            }
        }
        // Through the sigmoid and the two fc layers back to the pooled stats.
        let dpre: Vec<T> = dgate
            .iter()
            .zip(&cache.gate)
            .map(|(d, &gv)| T::from64(d.to64() * gv * (1.0 - gv)))
            .collect();
        let mut dz = self.fc2.backward(&dpre, branch.n);
        for (v, &keep) in dz.iter_mut().zip(&cache.fc_mask) {
            if !keep {
                *v = T::zero();
            }
        }
        let dsqueeze = self.fc1.backward(&dz, branch.n);
        let dsqueeze = Tensor4::from_vec(branch.n, branch.c, 1, 1, dsqueeze);
        let spread = global_avg_pool_backward(&dsqueeze, branch.h, branch.w);
        for (a, b) in dbranch.data.iter_mut().zip(&spread.data) {
            *a += *b;
        }

        // Residual branch back to the input.
        let d = self.bn2.backward(&dbranch);
        let d = self.conv2.backward(&d);
        let d = self.relu1.backward(&d);
        let d = self.bn1.backward(&d);
        let mut dx = self.conv1.backward(&d);

        // Shortcut path.
        match &mut self.downsample {
            Some((conv, bn)) => {
                let d = bn.backward(&g);
                let d = conv.backward(&d);
                for (a, b) in dx.data.iter_mut().zip(&d.data) {
                    *a += *b;
                }
            }
            None => {
                for (a, b) in dx.data.iter_mut().zip(&g.data) {
                    *a += *b;
                }
            }
        }
        dx
    }

    pub fn zero_grad(&mut self) {
        self.conv1.zero_grad();
        self.bn1.zero_grad();
        self.conv2.zero_grad();
        self.bn2.zero_grad();
        self.fc1.zero_grad();
        self.fc2.zero_grad();
        if let Some((conv, bn)) = &mut self.downsample {
            conv.zero_grad();
            bn.zero_grad();
        }
    }

    pub fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Vec<T>, &mut Vec<T>, bool),
    ) {
        f(
            format!("{prefix}.conv1.weight"),
            &mut self.conv1.weight,
            &mut self.conv1.grad_weight,
            true,
        );
        f(
            format!("{prefix}.conv1.bias"),
            &mut self.conv1.bias,
            &mut self.conv1.grad_bias,
            false,
        );
        f(
            format!("{prefix}.bn1.gamma"),
            &mut self.bn1.gamma,
            &mut self.bn1.grad_gamma,
            false,
        );
        f(
            format!("{prefix}.bn1.beta"),
            &mut self.bn1.beta,
            &mut self.bn1.grad_beta,
            false,
        );
        f(
            format!("{prefix}.conv2.weight"),
            &mut self.conv2.weight,
            &mut self.conv2.grad_weight,
            true,
        );
        f(
            format!("{prefix}.conv2.bias"),
            &mut self.conv2.bias,
            &mut self.conv2.grad_bias,
            false,
        );
        f(
            format!("{prefix}.bn2.gamma"),
            &mut self.bn2.gamma,
            &mut self.bn2.grad_gamma,
            false,
        );
        f(
            format!("{prefix}.bn2.beta"),
            &mut self.bn2.beta,
            &mut self.bn2.grad_beta,
            false,
        );
        f(
            format!("{prefix}.fc1.weight"),
            &mut self.fc1.weight,
            &mut self.fc1.grad_weight,
            true,
        );
        f(
            format!("{prefix}.fc1.bias"),
            &mut self.fc1.bias,
            &mut self.fc1.grad_bias,
            false,
        );
        f(
            format!("{prefix}.fc2.weight"),
            &mut self.fc2.weight,
            &mut self.fc2.grad_weight,
            true,
        );
        f(
            format!("{prefix}.fc2.bias"),
            &mut self.fc2.bias,
            &mut self.fc2.grad_bias,
            false,
        );
        if let Some((conv, bn)) = &mut self.downsample {
            f(
                format!("{prefix}.down.conv.weight"),
                &mut conv.weight,
                &mut conv.grad_weight,
                true,
            );
            f(
                format!("{prefix}.down.conv.bias"),
                &mut conv.bias,
                &mut conv.grad_bias,
                false,
            );
            f(
                format!("{prefix}.down.bn.gamma"),
                &mut bn.gamma,
                &mut bn.grad_gamma,
                false,
            );
            f(
                format!("{prefix}.down.bn.beta"),
                &mut bn.beta,
                &mut bn.grad_beta,
                false,
            );
        }
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<T>)) {
        f(format!("{prefix}.bn1.running_mean"), &mut self.bn1.running_mean);
        f(format!("{prefix}.bn1.running_var"), &mut self.bn1.running_var);
        f(format!("{prefix}.bn2.running_mean"), &mut self.bn2.running_mean);
        f(format!("{prefix}.bn2.running_var"), &mut self.bn2.running_var);
        if let Some((_, bn)) = &mut self.downsample {
            f(format!("{prefix}.down.bn.running_mean"), &mut bn.running_mean);
            f(format!("{prefix}.down.bn.running_var"), &mut bn.running_var);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block(in_c: usize, out_c: usize, stride: usize, seed: u64) -> SeBlock<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut block = SeBlock::new(in_c, out_c, stride, 4);
        block.visit_params("b", &mut |_, data, _, _| {
            for v in data.iter_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        });
        block
    }

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_vec(
            n,
            c,
            h,
            w,
            (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    /// Independent straight-line eval-mode reimplementation.
    fn straight_line_forward(block: &SeBlock<f64>, x: &Tensor4<f64>) -> Tensor4<f64> {
        fn conv(x: &Tensor4<f64>, c: &Conv2d<f64>) -> Tensor4<f64> {
            let oh = (x.h + 2 * c.padding - c.k) / c.stride + 1;
            let ow = (x.w + 2 * c.padding - c.k) / c.stride + 1;
            let mut out = Tensor4::zeros(x.n, c.out_c, oh, ow);
            for n in 0..x.n {
                for oc in 0..c.out_c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = c.bias[oc];
                            for ic in 0..x.c {
                                for ky in 0..c.k {
                                    for kx in 0..c.k {
                                        let iy =
                                            (oy * c.stride + ky) as isize - c.padding as isize;
                                        let ix =
                                            (ox * c.stride + kx) as isize - c.padding as isize;
                                        if iy < 0
                                            || ix < 0
                                            || iy as usize >= x.h
                                            || ix as usize >= x.w
                                        {
                                            continue;
                                        }
                                        s += c.weight[((oc * x.c + ic) * c.k + ky) * c.k + kx]
                                            * x.at(n, ic, iy as usize, ix as usize);
                                    }
                                }
                            }
                            let i = out.idx(n, oc, oy, ox);
                            out.data[i] = s;
                        }
                    }
                }
            }
            out
        }
        fn bn(x: &Tensor4<f64>, b: &BatchNorm2d<f64>) -> Tensor4<f64> {
            let mut out = x.clone();
            for n in 0..x.n {
                for c in 0..x.c {
                    let p = x.plane(n, c);
                    for i in 0..x.h * x.w {
                        out.data[p + i] = b.gamma[c] * (x.data[p + i] - b.running_mean[c])
                            / (b.running_var[c] + b.eps).sqrt()
                            + b.beta[c];
                    }
                }
            }
            out
        }
        let identity = match &block.downsample {
            Some((c, b)) => bn(&conv(x, c), b),
            None => x.clone(),
        };
        let mut h1 = bn(&conv(x, &block.conv1), &block.bn1);
        for v in h1.data.iter_mut() {
            *v = v.max(0.0);
        }
        let branch = bn(&conv(&h1, &block.conv2), &block.bn2);
        let plane = branch.h * branch.w;
        let mut out = branch.clone();
        for n in 0..branch.n {
            // squeeze + excitation
            let mut gate = vec![0.0; branch.c];
            let mut s = vec![0.0; branch.c];
            for c in 0..branch.c {
                let p = branch.plane(n, c);
                s[c] = branch.data[p..p + plane].iter().sum::<f64>() / plane as f64;
            }
            let hidden = block.fc1.out_dim;
            let mut z = vec![0.0; hidden];
            for o in 0..hidden {
                let mut v = block.fc1.bias[o];
                for i in 0..branch.c {
                    v += block.fc1.weight[o * branch.c + i] * s[i];
                }
                z[o] = v.max(0.0);
            }
            for (o, g) in gate.iter_mut().enumerate() {
                let mut v = block.fc2.bias[o];
                for (i, &zi) in z.iter().enumerate() {
                    v += block.fc2.weight[o * hidden + i] * zi;
                }
                *g = 1.0 / (1.0 + (-v).exp());
            }
            for c in 0..branch.c {
                let p = branch.plane(n, c);
                for i in 0..plane {
                    out.data[p + i] =
                        (branch.data[p + i] * gate[c] + identity.data[p + i]).max(0.0);
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        for &(in_c, out_c, stride) in &[(3usize, 3usize, 1usize), (2, 4, 2)] {
            let mut block = random_block(in_c, out_c, stride, 40 + stride as u64);
            let x = random_tensor(2, in_c, 6, 6, 41);
            let got = block.forward(&x, false).unwrap();
            let want = straight_line_forward(&block, &x);
            assert_eq!(got.dims(), want.dims());
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn saturated_gates_reduce_to_plain_residual_block() {
        let mut block = random_block(3, 3, 1, 50);
        // huge positive fc2 bias saturates the sigmoid
        for b in block.fc2.bias.iter_mut() {
            *b = 20.0;
        }
        for w in block.fc2.weight.iter_mut() {
            *w = 0.0;
        }
        let x = random_tensor(1, 3, 5, 5, 51);
        let mut gated = block.forward(&x, false).unwrap();
        // plain residual: same pipeline with gate == 1
        let mut plain = straight_line_forward(&block, &x);
        // straight-line with gate forced to 1: recompute by setting sigmoid input huge
        // (already saturated, so compare directly)
        for (a, b) in gated.data.iter_mut().zip(plain.data.iter_mut()) {
            assert!((*a - *b).abs() < 1e-6);
        }
    }

    #[test]
    fn negative_saturation_leaves_shortcut_only() {
        let mut block = random_block(3, 3, 1, 52);
        for b in block.fc2.bias.iter_mut() {
            *b = -20.0;
        }
        for w in block.fc2.weight.iter_mut() {
            *w = 0.0;
        }
        let x = random_tensor(1, 3, 5, 5, 53);
        let out = block.forward(&x, false).unwrap();
        for (o, &xi) in out.data.iter().zip(&x.data) {
            assert!((o - xi.max(0.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_gate_scales_branch_linearly() {
        // With fc2 zeroed the pre-sigmoid output is the bias: a single gate value.
        let mut block = random_block(2, 2, 1, 54);
        for w in block.fc2.weight.iter_mut() {
            *w = 0.0;
        }
        for b in block.fc2.bias.iter_mut() {
            *b = 0.4;
        }
        let g = 1.0 / (1.0 + (-0.4f64).exp());
        let x = random_tensor(1, 2, 4, 4, 55);
        let out = block.forward(&x, false).unwrap();
        // recompute with gate 1 (saturate positively) to recover the raw branch
        let mut ref_block = block.clone();
        for b in ref_block.fc2.bias.iter_mut() {
            *b = 40.0;
        }
        let full = ref_block.forward(&x, false).unwrap();
        // out_pre_relu = branch*g + id ; full_pre_relu = branch + id
        // where both are >0 the relation out = g*full + (1-g)*id holds
        for i in 0..out.data.len() {
            if out.data[i] > 0.0 && full.data[i] > 0.0 {
                let id = x.data[i];
                let branch_full = full.data[i] - id;
                assert!((out.data[i] - (g * branch_full + id)).abs() < 1e-9);
            }
        }
    }
}
