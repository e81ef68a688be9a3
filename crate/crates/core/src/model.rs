//! The patch classifier: a VGG-style stack of conv blocks over grayscale
//! patches. Each block is (conv 3x3, batch norm, ReLU) x2 followed by 2x2
//! max pooling; the head is dropout, global average pooling and a fully
//! connected chain ending in three logits (blank, human, robot).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mode, RunningStats, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output channels per conv block; each block halves the spatial size.
    pub block_channels: Vec<usize>,
    pub convs_per_block: usize,
    /// Square input edge length fed to the network. Patches are resized to
    /// this size before entering the first conv.
    pub input_size: usize,
    pub dropout_p: f64,
    /// Hidden widths of the fully connected head.
    pub fc_dims: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::paper()
    }
}

impl ModelConfig {
    /// The full-size architecture: five blocks (32..512 filters), 300x300
    /// inputs, head 512 -> 512 -> 128 -> 3.
    pub fn paper() -> Self {
        ModelConfig {
            block_channels: vec![32, 64, 128, 256, 512],
            convs_per_block: 2,
            input_size: 300,
            dropout_p: 0.4,
            fc_dims: vec![512, 128],
            num_classes: 3,
        }
    }

    /// A scaled-down variant for tests and the synthetic corpus.
    pub fn tiny() -> Self {
        ModelConfig {
            block_channels: vec![8, 16],
            convs_per_block: 2,
            input_size: 32,
            dropout_p: 0.4,
            fc_dims: vec![32],
            num_classes: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_channels.is_empty() {
            return Err(Error::Config("at least one conv block is required".into()));
        }
        if self.convs_per_block == 0 {
            return Err(Error::Config("convs_per_block must be >= 1".into()));
        }
        let min_input = 1usize << self.block_channels.len();
        if self.input_size < min_input {
            return Err(Error::Config(format!(
                "input_size {} too small for {} pooling stages (need >= {min_input})",
                self.input_size,
                self.block_channels.len()
            )));
        }
        if self.num_classes != 3 {
            return Err(Error::Config(format!(
                "this classifier is fixed at 3 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0,1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// Spatial sizes along the block chain, starting with the input size.
/// The default config traces 300 -> 150 -> 75 -> 37 -> 18 -> 9.
pub fn trace_shapes(config: &ModelConfig) -> Vec<usize> {
    let mut sizes = vec![config.input_size];
    let mut s = config.input_size;
    for _ in &config.block_channels {
        s /= 2;
        sizes.push(s);
    }
    sizes
}

/// Exact trainable parameter count: conv weights and biases, batch-norm
/// gamma and beta, fully connected weights and biases. Running statistics
/// are state, not parameters, and are excluded.
pub fn count_params(config: &ModelConfig) -> usize {
    let mut total = 0;
    let mut in_ch = 1;
    for &out_ch in &config.block_channels {
        let mut cin = in_ch;
        for _ in 0..config.convs_per_block {
            total += cin * out_ch * 9 + out_ch; // conv weight + bias
            total += 2 * out_ch; // bn gamma + beta
            cin = out_ch;
        }
        in_ch = out_ch;
    }
    let mut width = in_ch;
    for &dim in &config.fc_dims {
        total += width * dim + dim;
        width = dim;
    }
    total += width * config.num_classes + config.num_classes;
    total
}

/// One recorded forward pass: the tape, the logits node, and the parameter
/// leaves in the network's declaration order (for gradient readout).
pub struct ForwardPass {
    pub tape: Tape,
    pub logits: Var,
    pub param_vars: Vec<Var>,
}

/// The assembled classifier: parameter tensors in declaration order plus
/// per-layer batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    param_names: Vec<String>,
    param_values: Vec<Tensor>,
    bn_running: Vec<RunningStats>,
}

/// Kaiming-uniform bound for ReLU fan-in.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Builds a network with Kaiming-uniform conv/fc weights, zero biases and
/// identity batch norm, deterministically from `seed`.
pub fn build(config: &ModelConfig, seed: u64) -> Result<Network> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut values = Vec::new();
    let mut running = Vec::new();

    let uniform = |shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng| {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape, data).expect("init shapes are consistent")
    };

    let mut in_ch = 1usize;
    for (b, &out_ch) in config.block_channels.iter().enumerate() {
        let mut cin = in_ch;
        for conv in 1..=config.convs_per_block {
            let bound = kaiming_bound(cin * 9);
            names.push(format!("block{b}.conv{conv}.weight"));
            values.push(uniform(vec![out_ch, cin, 3, 3], bound, &mut rng));
            names.push(format!("block{b}.conv{conv}.bias"));
            values.push(Tensor::zeros(vec![out_ch]));
            names.push(format!("block{b}.bn{conv}.gamma"));
            values.push(Tensor::full(vec![out_ch], 1.0));
            names.push(format!("block{b}.bn{conv}.beta"));
            values.push(Tensor::zeros(vec![out_ch]));
            running.push(RunningStats::new(out_ch));
            cin = out_ch;
        }
        in_ch = out_ch;
    }

    let mut width = in_ch;
    let mut head: Vec<usize> = config.fc_dims.clone();
    head.push(config.num_classes);
    for (i, &dim) in head.iter().enumerate() {
        let bound = kaiming_bound(width);
        names.push(format!("fc{i}.weight"));
        values.push(uniform(vec![dim, width], bound, &mut rng));
        names.push(format!("fc{i}.bias"));
        values.push(Tensor::zeros(vec![dim]));
        width = dim;
    }

    Ok(Network {
        config: config.clone(),
        param_names: names,
        param_values: values,
        bn_running: running,
    })
}

impl Network {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.param_values
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.param_values
    }

    pub fn bn_running(&self) -> &[RunningStats] {
        &self.bn_running
    }

    /// Rebuilds a network from named tensors (parameters plus
    /// `*.running_mean` / `*.running_var` entries), as stored in a
    /// checkpoint.
    pub fn from_tensors(config: &ModelConfig, tensors: &[(String, Tensor)]) -> Result<Network> {
        let template = build(config, 0)?;
        let lookup = |name: &str| -> Result<&Tensor> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Validation(format!("checkpoint is missing tensor '{name}'")))
        };
        let mut values = Vec::with_capacity(template.param_values.len());
        for (name, expected) in template.param_names.iter().zip(&template.param_values) {
            let tensor = lookup(name)?;
            if tensor.shape() != expected.shape() {
                return Err(Error::Validation(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    tensor.shape(),
                    expected.shape()
                )));
            }
            values.push(tensor.clone());
        }
        let mut running = Vec::with_capacity(template.bn_running.len());
        for (i, stats) in template.bn_running.iter().enumerate() {
            let mean = lookup(&format!("bn_state{i}.running_mean"))?;
            let var = lookup(&format!("bn_state{i}.running_var"))?;
            if mean.numel() != stats.mean.len() || var.numel() != stats.var.len() {
                return Err(Error::Validation(format!(
                    "running stats {i} have wrong channel count"
                )));
            }
            running.push(RunningStats {
                mean: mean.data().to_vec(),
                var: var.data().to_vec(),
            });
        }
        Ok(Network {
            config: config.clone(),
            param_names: template.param_names,
            param_values: values,
            bn_running: running,
        })
    }

    /// All tensors needed to restore the network: parameters in declaration
    /// order, then batch-norm running statistics.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .param_names
            .iter()
            .cloned()
            .zip(self.param_values.iter().cloned())
            .collect();
        for (i, stats) in self.bn_running.iter().enumerate() {
            out.push((
                format!("bn_state{i}.running_mean"),
                Tensor::new(vec![stats.mean.len()], stats.mean.clone()).expect("stats shape"),
            ));
            out.push((
                format!("bn_state{i}.running_var"),
                Tensor::new(vec![stats.var.len()], stats.var.clone()).expect("stats shape"),
            ));
        }
        out
    }

    /// Training forward pass: consumes RNG for dropout, updates batch-norm
    /// running statistics.
    pub fn forward_train<R: Rng>(&mut self, batch: &Tensor, rng: &mut R) -> Result<ForwardPass> {
        let mut running = std::mem::take(&mut self.bn_running);
        let result = run_forward(
            &self.config,
            &self.param_values,
            &mut running,
            batch,
            Mode::Train,
            Some(rng),
        );
        self.bn_running = running;
        result
    }

    /// Deterministic inference on a frozen network: running statistics,
    /// no dropout, no RNG. Safe to call concurrently.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<ForwardPass> {
        let mut running = self.bn_running.clone();
        run_forward::<ChaCha8Rng>(
            &self.config,
            &self.param_values,
            &mut running,
            batch,
            Mode::Eval,
            None,
        )
    }

    /// Eval-mode logits as row-major `[N, num_classes]` values.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<f64>> {
        let pass = self.forward_eval(batch)?;
        Ok(pass.tape.value(pass.logits).data().to_vec())
    }
}

fn run_forward<R: Rng>(
    config: &ModelConfig,
    params: &[Tensor],
    bn_running: &mut [RunningStats],
    batch: &Tensor,
    mode: Mode,
    mut rng: Option<&mut R>,
) -> Result<ForwardPass> {
    let (n, c, h, w) = batch.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!("expected grayscale input, got {c} channels")));
    }
    if h != config.input_size || w != config.input_size {
        return Err(Error::Shape(format!(
            "expected {0}x{0} input, got {h}x{w}",
            config.input_size
        )));
    }
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }

    let mut tape = Tape::new();
    let requires_grad = mode == Mode::Train;
    let param_vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.clone(), requires_grad))
        .collect();
    let mut next_param = param_vars.iter().copied();
    let mut next = || next_param.next().expect("parameter order matches declaration");

    let mut x = tape.leaf(batch.clone(), false);
    let mut bn_idx = 0;
    for _ in &config.block_channels {
        for _ in 0..config.convs_per_block {
            let weight = next();
            let bias = next();
            let gamma = next();
            let beta = next();
            x = tape.conv2d(x, weight, bias, 1)?;
            x = tape.batchnorm(
                x,
                gamma,
                beta,
                &mut bn_running[bn_idx],
                mode,
                BN_EPS,
                BN_MOMENTUM,
            )?;
            x = tape.relu(x)?;
            bn_idx += 1;
        }
        x = tape.maxpool2(x)?;
    }

    // Head: dropout, global average pooling, fully connected chain.
    if mode == Mode::Train {
        let rng = rng
            .as_deref_mut()
            .ok_or_else(|| Error::Usage("train-mode forward requires an RNG".into()))?;
        x = tape.dropout(x, config.dropout_p, mode, rng)?;
    }
    x = tape.global_avg_pool(x)?;
    let fc_layers = config.fc_dims.len() + 1;
    for i in 0..fc_layers {
        let weight = next();
        let bias = next();
        x = tape.linear(x, weight, bias)?;
        if i + 1 < fc_layers {
            x = tape.relu(x)?;
        }
    }

    Ok(ForwardPass {
        tape,
        logits: x,
        param_vars,
    })
}

/// Softmax over one logits row.
pub fn softmax3(row: &[f64]) -> [f64; 3] {
    debug_assert_eq!(row.len(), 3);
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    [exps[0] / total, exps[1] / total, exps[2] / total]
}
