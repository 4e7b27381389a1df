use rand::{Rng, RngCore};

use super::config::NetworkConfig;
use super::layers::{self, Act, BnCache};
use crate::error::{Error, Result};
use crate::tensorio::FeatureTensor;

/// Trainable tensors in declaration order (also the checkpoint order).
pub const PARAM_NAMES: [&str; 13] = [
    "conv1.weight",
    "bn1.gamma",
    "bn1.beta",
    "conv2.weight",
    "bn2.gamma",
    "bn2.beta",
    "conv3.weight",
    "bn3.gamma",
    "bn3.beta",
    "dense.weight",
    "dense.bias",
    "output.weight",
    "output.bias",
];

const CONV_W: [usize; 3] = [0, 3, 6];
const BN_GAMMA: [usize; 3] = [1, 4, 7];
const BN_BETA: [usize; 3] = [2, 5, 8];
const DENSE_W: usize = 9;
const DENSE_B: usize = 10;
const OUT_W: usize = 11;
const OUT_B: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout.
    Train,
    /// Running statistics, no dropout.
    Infer,
}

/// Finer control over a pass than [`Mode`], e.g. for gradient checking with
/// frozen batch-norm statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassOptions {
    pub batch_stats: bool,
    pub dropout: bool,
    pub update_running: bool,
}

impl PassOptions {
    pub const TRAIN: PassOptions = PassOptions {
        batch_stats: true,
        dropout: true,
        update_running: true,
    };
    pub const INFER: PassOptions = PassOptions {
        batch_stats: false,
        dropout: false,
        update_running: false,
    };
    /// Deterministic training pass: batch statistics, no dropout, no running update.
    pub const BATCH_NO_DROPOUT: PassOptions = PassOptions {
        batch_stats: true,
        dropout: false,
        update_running: false,
    };
}

impl From<Mode> for PassOptions {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Train => PassOptions {
                update_running: false,
                ..PassOptions::TRAIN
            },
            Mode::Infer => PassOptions::INFER,
        }
    }
}

/// Network input: feature tensors rearranged to `[batch, channel, freq, time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    act: Act,
}

impl Batch {
    pub fn from_tensors(tensors: &[&FeatureTensor]) -> Result<Self> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let d = first.dims();
        let mut act = Act::zeros(tensors.len(), d.channels, d.freq, d.time);
        let plane = d.freq * d.time;
        for (b, t) in tensors.iter().enumerate() {
            if t.dims() != d {
                return Err(Error::Shape(format!(
                    "batch mixes dims {:?} and {:?}",
                    d,
                    t.dims()
                )));
            }
            let src = t.data();
            for cell in 0..plane {
                for c in 0..d.channels {
                    act.data[(b * d.channels + c) * plane + cell] = src[cell * d.channels + c];
                }
            }
        }
        Ok(Batch { act })
    }

    pub fn len(&self) -> usize {
        self.act.n
    }

    pub fn is_empty(&self) -> bool {
        self.act.n == 0
    }
}

/// Everything the backward pass needs from a forward pass.
struct Pass {
    bn: Vec<BnCache>,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
    a1: Act,
    pool_idx: Vec<usize>,
    p1: Act,
    drop1: Option<Vec<f64>>,
    a2: Act,
    a3: Act,
    gmp_idx: Vec<usize>,
    g: Vec<f64>,
    drop2: Option<Vec<f64>>,
    h: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    cfg: NetworkConfig,
    params: Vec<Vec<f64>>,
    running: Vec<BnRunning>,
}

impl Network {
    /// He-uniform weights, zero biases, unit BN scale and zero shift.
    pub fn new<R: Rng + ?Sized>(cfg: NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let sizes = cfg.param_sizes();
        let c = cfg.input.channels;
        let fan_in = [
            c * cfg.conv1.kernel.0 * cfg.conv1.kernel.1,
            cfg.conv1.out * cfg.conv2.kernel.0 * cfg.conv2.kernel.1,
            cfg.conv2.out * cfg.conv3.kernel.0 * cfg.conv3.kernel.1,
        ];
        let mut params: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        let mut he = |p: &mut Vec<f64>, fan: usize| {
            let limit = (6.0 / fan as f64).sqrt();
            p.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
        };
        for (k, &fan) in fan_in.iter().enumerate() {
            he(&mut params[CONV_W[k]], fan);
            params[BN_GAMMA[k]].iter_mut().for_each(|v| *v = 1.0);
        }
        he(&mut params[DENSE_W], cfg.conv3.out);
        he(&mut params[OUT_W], cfg.hidden);
        let running = [cfg.conv1.out, cfg.conv2.out, cfg.conv3.out]
            .iter()
            .map(|&w| BnRunning {
                mean: vec![0.0; w],
                var: vec![1.0; w],
            })
            .collect();
        Ok(Network {
            cfg,
            params,
            running,
        })
    }

    /// Rebuilds a network from stored tensors, checking every size.
    pub fn from_parts(cfg: NetworkConfig, params: Vec<Vec<f64>>, running: Vec<BnRunning>) -> Result<Self> {
        cfg.validate()?;
        let sizes = cfg.param_sizes();
        if params.len() != sizes.len() || params.iter().zip(&sizes).any(|(p, &n)| p.len() != n) {
            return Err(Error::Shape("parameter sizes do not match config".into()));
        }
        let widths = [cfg.conv1.out, cfg.conv2.out, cfg.conv3.out];
        if running.len() != 3
            || running
                .iter()
                .zip(widths)
                .any(|(r, w)| r.mean.len() != w || r.var.len() != w)
        {
            return Err(Error::Shape("batch-norm statistics do not match config".into()));
        }
        Ok(Network {
            cfg,
            params,
            running,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.params
    }

    pub fn running(&self) -> &[BnRunning] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [BnRunning] {
        &mut self.running
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let d = self.cfg.input;
        let a = &batch.act;
        if a.n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if (a.h, a.w, a.c) != (d.freq, d.time, d.channels) {
            return Err(Error::Shape(format!(
                "input {}x{}x{} does not match network input {}x{}x{}",
                a.h, a.w, a.c, d.freq, d.time, d.channels
            )));
        }
        Ok(())
    }

    fn conv_block(&self, k: usize, x: &Act, opts: PassOptions, pass_bn: &mut Vec<BnCache>, moments: &mut Vec<(Vec<f64>, Vec<f64>)>) -> Act {
        let spec = [self.cfg.conv1, self.cfg.conv2, self.cfg.conv3][k];
        let z = layers::conv_forward(x, &self.params[CONV_W[k]], spec.out, spec.kernel.0, spec.kernel.1);
        let (mean, var) = if opts.batch_stats {
            layers::batch_moments(&z)
        } else {
            (self.running[k].mean.clone(), self.running[k].var.clone())
        };
        let (a, cache) = layers::bn_relu_forward(
            &z,
            &self.params[BN_GAMMA[k]],
            &self.params[BN_BETA[k]],
            &mean,
            &var,
            self.cfg.bn_eps,
            opts.batch_stats,
        );
        pass_bn.push(cache);
        moments.push((mean, var));
        a
    }

    fn run(&self, x: &Act, opts: PassOptions, mut rng: Option<&mut dyn RngCore>) -> Result<Pass> {
        if opts.dropout && rng.is_none() {
            return Err(Error::Config("dropout requires an RNG".into()));
        }
        let cfg = &self.cfg;
        let mut bn = Vec::with_capacity(3);
        let mut moments = Vec::with_capacity(3);
        let a1 = self.conv_block(0, x, opts, &mut bn, &mut moments);
        let (mut p1, pool_idx) = layers::maxpool_freq_forward(&a1, cfg.pool1);
        let drop1 = match rng.as_deref_mut() {
            Some(r) if opts.dropout => Some(layers::dropout_forward(&mut p1.data, cfg.dropout1, r)),
            _ => None,
        };
        let a2 = self.conv_block(1, &p1, opts, &mut bn, &mut moments);
        let a3 = self.conv_block(2, &a2, opts, &mut bn, &mut moments);
        let (mut g, gmp_idx) = layers::global_max_forward(&a3);
        let drop2 = match rng.as_deref_mut() {
            Some(r) if opts.dropout => Some(layers::dropout_forward(&mut g, cfg.dropout2, r)),
            _ => None,
        };
        let n = x.n;
        let mut h = layers::dense_forward(&g, n, cfg.conv3.out, &self.params[DENSE_W], &self.params[DENSE_B]);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let logits = layers::dense_forward(&h, n, cfg.hidden, &self.params[OUT_W], &self.params[OUT_B]);
        Ok(Pass {
            bn,
            moments,
            a1,
            pool_idx,
            p1,
            drop1,
            a2,
            a3,
            gmp_idx,
            g,
            drop2,
            h,
            logits,
        })
    }

    /// Class-probability vectors, one per example.
    pub fn forward(&self, batch: &Batch, mode: Mode, rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        self.forward_with(batch, mode.into(), Some(rng))
    }

    pub fn forward_with(&self, batch: &Batch, opts: PassOptions, rng: Option<&mut dyn RngCore>) -> Result<Vec<Vec<f64>>> {
        self.check_batch(batch)?;
        let pass = self.run(&batch.act, opts, rng)?;
        let k = self.cfg.n_classes;
        Ok(layers::softmax(&pass.logits, k)
            .chunks_exact(k)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Inference-mode argmax label per example.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
        let probs = self.forward_with(batch, PassOptions::INFER, None)?;
        Ok(probs
            .iter()
            .map(|p| {
                (0..p.len())
                    .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
                    .expect("at least two classes")
            })
            .collect())
    }

    /// Runs an inference pass and reports each stage's output size (`F x T x C`
    /// for maps, a single length for vectors).
    pub fn trace_shapes(&self, batch: &Batch) -> Result<Vec<Vec<usize>>> {
        self.check_batch(batch)?;
        let pass = self.run(&batch.act, PassOptions::INFER, None)?;
        let n = batch.len();
        let maps = |a: &Act| vec![a.h, a.w, a.c];
        Ok(vec![
            maps(&pass.a1),
            maps(&pass.p1),
            maps(&pass.a2),
            maps(&pass.a3),
            vec![pass.g.len() / n],
            vec![pass.h.len() / n],
            vec![pass.logits.len() / n],
        ])
    }

    fn check_labels(&self, batch: &Batch, labels: &[usize]) -> Result<()> {
        if labels.len() != batch.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} examples",
                labels.len(),
                batch.len()
            )));
        }
        if let Some(z) = labels.iter().find(|&&z| z >= self.cfg.n_classes) {
            return Err(Error::Config(format!("label {z} out of range")));
        }
        Ok(())
    }

    /// Mean cross-entropy without touching running statistics.
    pub fn loss(&self, batch: &Batch, labels: &[usize], opts: PassOptions, rng: Option<&mut dyn RngCore>) -> Result<f64> {
        self.check_batch(batch)?;
        self.check_labels(batch, labels)?;
        let pass = self.run(&batch.act, opts, rng)?;
        Ok(layers::cross_entropy(&pass.logits, self.cfg.n_classes, labels))
    }

    /// Mean cross-entropy and its gradient for every trainable tensor.
    /// Running statistics are updated when `opts` asks for it.
    pub fn loss_and_grad(
        &mut self,
        batch: &Batch,
        labels: &[usize],
        opts: PassOptions,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        self.check_batch(batch)?;
        self.check_labels(batch, labels)?;
        let x = &batch.act;
        let pass = self.run(x, opts, rng)?;
        let cfg = &self.cfg;
        let (n, k) = (x.n, cfg.n_classes);
        let loss = layers::cross_entropy(&pass.logits, k, labels);

        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(PARAM_NAMES.len());
        grads.resize(PARAM_NAMES.len(), Vec::new());

        let mut dlogits = layers::softmax(&pass.logits, k);
        for (r, &z) in labels.iter().enumerate() {
            dlogits[r * k + z] -= 1.0;
        }
        dlogits.iter_mut().for_each(|v| *v /= n as f64);

        let (mut dh, gw, gb) = layers::dense_backward(&pass.h, n, cfg.hidden, &self.params[OUT_W], &dlogits);
        grads[OUT_W] = gw;
        grads[OUT_B] = gb;
        for (d, &hv) in dh.iter_mut().zip(&pass.h) {
            if hv <= 0.0 {
                *d = 0.0;
            }
        }
        let (mut dg, gw, gb) = layers::dense_backward(&pass.g, n, cfg.conv3.out, &self.params[DENSE_W], &dh);
        grads[DENSE_W] = gw;
        grads[DENSE_B] = gb;
        if let Some(mask) = &pass.drop2 {
            dg.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }

        let mut da3 = Act::zeros(pass.a3.n, pass.a3.c, pass.a3.h, pass.a3.w);
        da3.data = layers::scatter_backward(&dg, &pass.gmp_idx, pass.a3.data.len());
        let (dz3, gg, gbeta) = layers::bn_relu_backward(&da3, &pass.a3, &pass.bn[2], &self.params[BN_GAMMA[2]]);
        grads[BN_GAMMA[2]] = gg;
        grads[BN_BETA[2]] = gbeta;
        let (da2, gw) = layers::conv_backward(&pass.a2, &self.params[CONV_W[2]], &dz3, cfg.conv3.kernel.0, cfg.conv3.kernel.1, true);
        grads[CONV_W[2]] = gw;

        let da2 = da2.expect("input gradient requested");
        let (dz2, gg, gbeta) = layers::bn_relu_backward(&da2, &pass.a2, &pass.bn[1], &self.params[BN_GAMMA[1]]);
        grads[BN_GAMMA[1]] = gg;
        grads[BN_BETA[1]] = gbeta;
        let (dp1, gw) = layers::conv_backward(&pass.p1, &self.params[CONV_W[1]], &dz2, cfg.conv2.kernel.0, cfg.conv2.kernel.1, true);
        grads[CONV_W[1]] = gw;

        let mut dp1 = dp1.expect("input gradient requested");
        if let Some(mask) = &pass.drop1 {
            dp1.data.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        let mut da1 = Act::zeros(pass.a1.n, pass.a1.c, pass.a1.h, pass.a1.w);
        da1.data = layers::scatter_backward(&dp1.data, &pass.pool_idx, pass.a1.data.len());
        let (dz1, gg, gbeta) = layers::bn_relu_backward(&da1, &pass.a1, &pass.bn[0], &self.params[BN_GAMMA[0]]);
        grads[BN_GAMMA[0]] = gg;
        grads[BN_BETA[0]] = gbeta;
        let (_, gw) = layers::conv_backward(x, &self.params[CONV_W[0]], &dz1, cfg.conv1.kernel.0, cfg.conv1.kernel.1, false);
        grads[CONV_W[0]] = gw;

        if opts.batch_stats && opts.update_running {
            let mom = self.cfg.bn_momentum;
            for (run, (mean, var)) in self.running.iter_mut().zip(&pass.moments) {
                for (r, m) in run.mean.iter_mut().zip(mean) {
                    *r = mom * *r + (1.0 - mom) * m;
                }
                for (r, v) in run.var.iter_mut().zip(var) {
                    *r = mom * *r + (1.0 - mom) * v;
                }
            }
        }
        Ok((loss, grads))
    }
}
