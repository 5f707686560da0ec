//! Small fully connected networks with rectifier hidden layers and a scalar
//! head, exact backpropagation, and plain-gradient / Adam updates.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Affine,
    Logistic,
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Parameters are stored flat, layer by layer: weights (row-major, one row per
/// output node) then biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    layer_sizes: Vec<usize>,
    output: OutputActivation,
    params: Vec<f64>,
}

/// Scratch buffers for forward/backward passes.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

impl FeedForwardNet {
    /// All parameters zero.
    pub fn zeros(layer_sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidParameter(format!("bad layer sizes {layer_sizes:?}: need input..., 1")));
        }
        let count = layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self { layer_sizes: layer_sizes.to_vec(), output, params: vec![0.0; count] })
    }

    /// Weights uniform in `±√(6/(fan_in + fan_out))`, biases zero.
    pub fn glorot<R: Rng>(layer_sizes: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, output)?;
        let mut off = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = rng.gen_range(-a..a);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    /// `input → hidden × depth → 1`.
    pub fn mlp<R: Rng>(input: usize, hidden: usize, depth: usize, output: OutputActivation, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat(hidden).take(depth));
        sizes.push(1);
        Self::glorot(&sizes, output, rng)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    fn head(&self, z: f64) -> f64 {
        match self.output {
            OutputActivation::Affine => z,
            OutputActivation::Logistic => logistic(z),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.head(self.pre_activation_unchecked(x, &mut Workspace::default())))
    }

    /// Output-node value before the head activation.
    pub fn pre_activation(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.pre_activation_unchecked(x, &mut Workspace::default()))
    }

    pub fn forward_with(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        self.head(self.pre_activation_unchecked(x, ws))
    }

    fn pre_activation_unchecked(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        let layers = self.layer_sizes.len() - 1;
        ws.acts.resize(layers, Vec::new());
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            if l + 1 == layers {
                let a = &ws.acts[l];
                return b[0] + w.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let a = &head[l];
            let out = &mut tail[0];
            out.clear();
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let z = b[j] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
                out.push(z.max(0.0));
            }
        }
        unreachable!()
    }

    /// Output and its gradient with respect to every parameter.
    pub fn grad_params(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let mut g = vec![0.0; self.params.len()];
        let y = self.accumulate_grad(x, 1.0, &mut g, &mut Workspace::default());
        Ok((y, g))
    }

    /// Adds `scale·∇y(x)` to `acc` and returns `y(x)`. The rectifier's
    /// derivative at exactly zero is taken as zero.
    pub fn accumulate_grad(&self, x: &[f64], scale: f64, acc: &mut [f64], ws: &mut Workspace) -> f64 {
        let z = self.pre_activation_unchecked(x, ws);
        let y = self.head(z);
        let dz = match self.output {
            OutputActivation::Affine => 1.0,
            OutputActivation::Logistic => y * (1.0 - y),
        } * scale;
        let layers = self.layer_sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.layer_sizes[l] * self.layer_sizes[l + 1] + self.layer_sizes[l + 1];
        }
        ws.delta.clear();
        ws.delta.push(dz);
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let o = offsets[l];
            let a = &ws.acts[l];
            for j in 0..n_out {
                let d = ws.delta[j];
                if d == 0.0 {
                    continue;
                }
                let row = &mut acc[o + j * n_in..o + (j + 1) * n_in];
                for (r, ai) in row.iter_mut().zip(a) {
                    *r += d * ai;
                }
                acc[o + n_in * n_out + j] += d;
            }
            if l == 0 {
                break;
            }
            ws.next.clear();
            ws.next.resize(n_in, 0.0);
            let w = &self.params[o..o + n_in * n_out];
            for j in 0..n_out {
                let d = ws.delta[j];
                if d == 0.0 {
                    continue;
                }
                for (k, nk) in ws.next.iter_mut().enumerate() {
                    *nk += w[j * n_in + k] * d;
                }
            }
            for (k, nk) in ws.next.iter_mut().enumerate() {
                if a[k] <= 0.0 {
                    *nk = 0.0;
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.next);
        }
        y
    }

    /// Multiplies the affine output by `scale > 0` and adds `shift`. The factor
    /// is spread evenly over the layers (`scale^(1/L)` per weight matrix), which
    /// leaves the function unchanged because rectifiers are positively homogeneous.
    pub fn rescale_output(&mut self, scale: f64, shift: f64) -> Result<()> {
        if self.output != OutputActivation::Affine {
            return Err(Error::InvalidParameter("only affine heads can be rescaled".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("output scale {scale} must be positive")));
        }
        let layers = self.layer_sizes.len() - 1;
        let c = scale.powf(1.0 / layers as f64);
        let mut off = 0;
        let mut cum = 1.0;
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            cum *= c;
            for p in &mut self.params[off..off + n_in * n_out] {
                *p *= c;
            }
            for p in &mut self.params[off + n_in * n_out..off + n_in * n_out + n_out] {
                *p *= cum;
            }
            off += n_in * n_out + n_out;
        }
        let b = self.params.len() - 1;
        self.params[b] += shift;
        Ok(())
    }

    /// Multiplies the output weights by `k` and each hidden layer's weights by
    /// `k^(−1/H)` (biases by the running product), leaving the function unchanged.
    pub fn rebalance(&mut self, k: f64) -> Result<()> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidParameter(format!("rebalance factor {k} must be positive")));
        }
        let layers = self.layer_sizes.len() - 1;
        let hidden = layers - 1;
        let c = if hidden > 0 { k.powf(-1.0 / hidden as f64) } else { 1.0 };
        let mut off = 0;
        let mut cum = 1.0;
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = if l + 1 == layers { k } else { c };
            cum *= if l + 1 == layers { 1.0 } else { c };
            for p in &mut self.params[off..off + n_in * n_out] {
                *p *= w;
            }
            if l + 1 < layers {
                for p in &mut self.params[off + n_in * n_out..off + n_in * n_out + n_out] {
                    *p *= cum;
                }
            }
            off += n_in * n_out + n_out;
        }
        Ok(())
    }

    /// Mean squared norm of the parameter gradient over `inputs`.
    pub fn mean_grad_sq(&self, inputs: &[Vec<f64>]) -> f64 {
        let mut ws = Workspace::default();
        let mut g = vec![0.0; self.params.len()];
        let mut acc = 0.0;
        for x in inputs {
            g.iter_mut().for_each(|v| *v = 0.0);
            self.accumulate_grad(x, 1.0, &mut g, &mut ws);
            acc += g.iter().map(|v| v * v).sum::<f64>();
        }
        acc / inputs.len().max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(s)?;
        let expected = Self::zeros(&net.layer_sizes, net.output)?.param_count();
        if net.params.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: net.params.len() });
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, rate: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = kind {
            if !(0.0 < beta1 && beta1 < 1.0 && 0.0 < beta2 && beta2 < 1.0 && eps > 0.0) {
                return Err(Error::InvalidParameter("Adam needs beta1, beta2 in (0,1) and eps > 0".into()));
            }
        }
        Ok(Self { kind, rate, m: Vec::new(), v: Vec::new(), t: 0 })
    }

    pub fn sgd(rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, rate)
    }

    pub fn adam(rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), rate)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Moves the parameters along `sign·direction` (`+1` ascent, `−1` descent):
/// by `rate·direction` for plain steps, by the bias-corrected Adam rule otherwise.
pub fn sgd_step(net: &mut FeedForwardNet, opt: &mut OptimizerState, direction: &[f64], sign: f64) -> Result<()> {
    if direction.len() != net.param_count() {
        return Err(Error::DimensionMismatch { expected: net.param_count(), got: direction.len() });
    }
    opt.t += 1;
    match opt.kind {
        OptimizerKind::Sgd => {
            for (p, g) in net.params.iter_mut().zip(direction) {
                *p += sign * opt.rate * g;
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            if opt.m.len() != direction.len() {
                opt.m = vec![0.0; direction.len()];
                opt.v = vec![0.0; direction.len()];
            }
            let c1 = 1.0 - beta1.powi(opt.t as i32);
            let c2 = 1.0 - beta2.powi(opt.t as i32);
            for k in 0..direction.len() {
                let g = direction[k];
                opt.m[k] = beta1 * opt.m[k] + (1.0 - beta1) * g;
                opt.v[k] = beta2 * opt.v[k] + (1.0 - beta2) * g * g;
                let mh = opt.m[k] / c1;
                let vh = opt.v[k] / c2;
                net.params[k] += sign * opt.rate * mh / (vh.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub batches: usize,
    pub batch_size: usize,
    /// Adam rate, decayed linearly to 1% of this value.
    pub rate: f64,
    /// Stop once held-out MSE < max(`rel_tol`·Var(target), `abs_tol`).
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub holdout: usize,
    pub check_every: usize,
    /// Fit affine heads on standardized targets, then fold mean and scale back in.
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn yes() -> bool {
    true
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { batches: 10_000, batch_size: 64, rate: 1e-3, rel_tol: 1e-4, abs_tol: 1e-8, holdout: 1000, check_every: 250, standardize: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainReport {
    pub mse: f64,
    pub target_variance: f64,
    pub batches: usize,
    pub converged: bool,
}

/// Fits `net` to `targets[k]` at `inputs[k]` by mean-squared error with Adam,
/// drawing mini-batches uniformly from the sample set. Affine heads are fitted
/// on standardized targets and the scale is folded back into the output layer.
pub fn pretrain_supervised<R: Rng>(
    net: &mut FeedForwardNet,
    inputs: &[Vec<f64>],
    targets: &[f64],
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<PretrainReport> {
    if inputs.is_empty() {
        return Err(Error::Empty("pretraining sample"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), got: targets.len() });
    }
    for x in inputs {
        net.check_input(x)?;
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let (shift, scale) = match net.output {
        OutputActivation::Affine if cfg.standardize => (mean, if var > 0.0 { var.sqrt() } else { 1.0 }),
        _ => (0.0, 1.0),
    };
    let fit: Vec<f64> = targets.iter().map(|t| (t - shift) / scale).collect();
    let threshold = (cfg.rel_tol * var).max(cfg.abs_tol) / (scale * scale);

    let holdout: Vec<usize> = (0..cfg.holdout.max(1)).map(|_| rng.gen_range(0..inputs.len())).collect();
    let mut ws = Workspace::default();
    let mse = |net: &FeedForwardNet, ws: &mut Workspace| {
        holdout.iter().map(|&k| (net.forward_with(&inputs[k], ws) - fit[k]).powi(2)).sum::<f64>() / holdout.len() as f64
    };

    let mut opt = OptimizerState::adam(cfg.rate)?;
    let mut grad = vec![0.0; net.param_count()];
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut cursor = order.len();
    let mut err = mse(net, &mut ws);
    let mut done = 0;
    while done < cfg.batches && err >= threshold {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            let k = order[cursor];
            cursor += 1;
            let y = net.forward_with(&inputs[k], &mut ws);
            net.accumulate_grad(&inputs[k], 2.0 * (y - fit[k]) / cfg.batch_size as f64, &mut grad, &mut ws);
        }
        opt.rate = cfg.rate * (1.0 - 0.99 * done as f64 / cfg.batches as f64);
        sgd_step(net, &mut opt, &grad, -1.0)?;
        done += 1;
        if done % cfg.check_every == 0 || done == cfg.batches {
            err = mse(net, &mut ws);
        }
    }
    if net.output == OutputActivation::Affine && cfg.standardize {
        net.rescale_output(scale, shift)?;
    }
    let mse = err * scale * scale;
    let converged = err < threshold;
    if !converged {
        log::warn!("pretraining stopped after {done} batches with MSE {mse:e} (variance {var:e})");
    }
    Ok(PretrainReport { mse, target_variance: var, batches: done, converged })
}
