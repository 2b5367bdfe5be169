use super::tensor::Element;

/// Final classifier layer for the angular-margin objective: a bias-free
/// weight matrix whose rows are normalized before use, so class scores are
/// `||x|| * cos(theta_j)`.
#[derive(Debug, Clone)]
pub struct AngularHead<T> {
    pub classes: usize,
    pub dim: usize,
    pub weight: Vec<T>,      // classes x dim, raw (unnormalized) rows
    pub grad_weight: Vec<T>, // gradient w.r.t. the raw rows
}

impl<T: Element> AngularHead<T> {
    pub fn new(classes: usize, dim: usize) -> Self {
        AngularHead {
            classes,
            dim,
            weight: vec![T::zero(); classes * dim],
            grad_weight: vec![T::zero(); classes * dim],
        }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad_weight.iter_mut() {
            *g = T::zero();
        }
    }

    fn normalized_rows(&self) -> Vec<(Vec<f64>, f64)> {
        (0..self.classes)
            .map(|j| {
                let row: Vec<f64> = self.weight[j * self.dim..(j + 1) * self.dim]
                    .iter()
                    .map(|v| v.to64())
                    .collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                (row.iter().map(|v| v / norm).collect(), norm)
            })
            .collect()
    }

    /// Margin-free scores for evaluation: `z_j = x . w_j / ||w_j||`.
    pub fn logits(&self, embed: &[T], batch: usize) -> Vec<T> {
        assert_eq!(embed.len(), batch * self.dim);
        let rows = self.normalized_rows();
        let mut out = vec![T::zero(); batch * self.classes];
        for b in 0..batch {
            let x = &embed[b * self.dim..(b + 1) * self.dim];
            for (j, (row, _)) in rows.iter().enumerate() {
                let mut s = 0.0f64;
                for (xi, wi) in x.iter().zip(row) {
                    s += xi.to64() * wi;
                }
                out[b * self.classes + j] = T::from64(s);
            }
        }
        out
    }
}

/// psi(theta) = (-1)^k * T_m(cos theta) - 2k for theta in [k pi/m, (k+1) pi/m],
/// and its derivative with respect to cos theta, (-1)^k * m * U_{m-1}(cos theta).
fn psi_and_dpsi(cos: f64, m: u32) -> (f64, f64) {
    let c = cos.clamp(-1.0, 1.0);
    if m == 1 {
        return (c, 1.0);
    }
    let theta = c.acos();
    let k = ((theta * m as f64 / std::f64::consts::PI).floor() as u32).min(m - 1);
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    // Chebyshev recurrences: T_0=1, T_1=c; U_0=1, U_1=2c.
    let (mut t_prev, mut t_cur) = (1.0f64, c);
    let (mut u_prev, mut u_cur) = (1.0f64, 2.0 * c);
    for _ in 2..=m {
        let t_next = 2.0 * c * t_cur - t_prev;
        t_prev = t_cur;
        t_cur = t_next;
        let u_next = 2.0 * c * u_cur - u_prev;
        u_prev = u_cur;
        u_cur = u_next;
    }
    let t_m = if m == 0 { 1.0 } else { t_cur };
    let u_m_minus_1 = u_prev; // after the loop u_prev = U_{m-1}
    (sign * t_m - 2.0 * k as f64, sign * m as f64 * u_m_minus_1)
}

/// Angular-margin softmax cross-entropy, averaged over the batch.
///
/// The target-class logit is the annealed blend
/// `||x|| * (lambda*cos + psi(cos)) / (1 + lambda)`; non-target logits are
/// plain `||x|| * cos`. Returns the mean loss and the gradient w.r.t. the
/// embeddings; weight gradients accumulate into `head.grad_weight` through
/// the row normalization.
pub fn asoftmax_loss<T: Element>(
    head: &mut AngularHead<T>,
    embed: &[T],
    batch: usize,
    labels: &[usize],
    margin: u32,
    lambda: f64,
) -> (f64, Vec<T>) {
    assert!(margin >= 1, "margin must be >= 1");
    assert!(lambda >= 0.0);
    assert_eq!(embed.len(), batch * head.dim);
    assert_eq!(labels.len(), batch);
    let dim = head.dim;
    let classes = head.classes;
    let rows = head.normalized_rows();

    let mut total_loss = 0.0f64;
    let mut grad_embed = vec![0.0f64; batch * dim];
    let mut grad_what = vec![0.0f64; classes * dim]; // grad w.r.t. normalized rows
    let inv_batch = 1.0 / batch as f64;

    for b in 0..batch {
        let y = labels[b];
        assert!(y < classes, "label {y} out of range");
        let x: Vec<f64> = embed[b * dim..(b + 1) * dim].iter().map(|v| v.to64()).collect();
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);

        let dots: Vec<f64> = rows
            .iter()
            .map(|(row, _)| x.iter().zip(row).map(|(a, w)| a * w).sum::<f64>())
            .collect();
        let c_y = (dots[y] / r).clamp(-1.0, 1.0);
        let (psi, dpsi) = psi_and_dpsi(c_y, margin);
        let g = (lambda * c_y + psi) / (1.0 + lambda);
        let dg = (lambda + dpsi) / (1.0 + lambda);

        let mut logits = dots.clone();
        logits[y] = r * g;

        // log-sum-exp softmax cross-entropy
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        total_loss += (denom.ln() + max - logits[y]) * inv_batch;

        for j in 0..classes {
            let dlogit = (exps[j] / denom - if j == y { 1.0 } else { 0.0 }) * inv_batch;
            if dlogit == 0.0 {
                continue;
            }
            let (row, _) = &rows[j];
            if j == y {
                // d(r*g(c))/dx = g*x/r + dg*(w_hat - c*x/r); d/dw_hat = dg*x
                for i in 0..dim {
                    grad_embed[b * dim + i] +=
                        dlogit * (g * x[i] / r + dg * (row[i] - c_y * x[i] / r));
                    grad_what[j * dim + i] += dlogit * dg * x[i];
                }
            } else {
                for i in 0..dim {
                    grad_embed[b * dim + i] += dlogit * row[i];
                    grad_what[j * dim + i] += dlogit * x[i];
                }
            }
        }
    }

    // Push normalized-row gradients through w_hat = w/||w||:
    // grad_w = (grad_what - (grad_what . w_hat) w_hat) / ||w||.
    for j in 0..classes {
        let (row, norm) = &rows[j];
        let gw = &grad_what[j * dim..(j + 1) * dim];
        let proj: f64 = gw.iter().zip(row).map(|(g, w)| g * w).sum();
        for i in 0..dim {
            let g = (gw[i] - proj * row[i]) / norm;
            head.grad_weight[j * dim + i] += T::from64(g);
        }
    }

    (
        total_loss,
        grad_embed.into_iter().map(T::from64).collect(),
    )
}
