use crate::error::{Error, Result};
use crate::tensorio::Dims;

/// Spatial kernel `(freq, time)` and number of output maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub out: usize,
}

/// Topology: three conv+BN+ReLU blocks (max pool and dropout after the
/// first), global max pooling, dropout, a ReLU dense layer and a softmax
/// output layer. Convolutions use "same" zero padding with stride 1 and mix
/// all input maps.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input: Dims,
    pub conv1: ConvSpec,
    pub pool1: usize,
    pub dropout1: f64,
    pub conv2: ConvSpec,
    pub conv3: ConvSpec,
    pub dropout2: f64,
    pub hidden: usize,
    pub n_classes: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub layer: &'static str,
    /// `F x T x C`, or a single length for vectors.
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl NetworkConfig {
    /// The full-size network: 40x501x16 input, widths 64/128/256, 128 hidden units.
    pub fn full_size(n_classes: usize) -> Self {
        NetworkConfig {
            input: Dims::new(40, 501, 16),
            conv1: ConvSpec {
                kernel: (7, 1),
                out: 64,
            },
            pool1: 4,
            dropout1: 0.2,
            conv2: ConvSpec {
                kernel: (10, 1),
                out: 128,
            },
            conv3: ConvSpec {
                kernel: (1, 7),
                out: 256,
            },
            dropout2: 0.5,
            hidden: 128,
            n_classes,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    /// Same topology for an arbitrary input, with kernels clipped to fit:
    /// conv2 spans at most the pooled frequency axis, as in the full-size net.
    pub fn scaled(input: Dims, widths: [usize; 3], hidden: usize, n_classes: usize) -> Self {
        let base = Self::full_size(n_classes);
        let pooled = (input.freq / base.pool1).max(1);
        NetworkConfig {
            input,
            conv1: ConvSpec {
                kernel: (base.conv1.kernel.0.min(input.freq), 1),
                out: widths[0],
            },
            conv2: ConvSpec {
                kernel: (base.conv2.kernel.0.min(pooled), 1),
                out: widths[1],
            },
            conv3: ConvSpec {
                kernel: (1, base.conv3.kernel.1.min(input.time)),
                out: widths[2],
            },
            hidden,
            ..base
        }
    }

    /// The smaller default used for laptop-scale experiments.
    pub fn desk(input: Dims, n_classes: usize) -> Self {
        Self::scaled(input, [16, 32, 64], 32, n_classes)
    }

    pub fn pooled_freq(&self) -> usize {
        self.input.freq / self.pool1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = self.input;
        if d.freq == 0 || d.time == 0 || d.channels == 0 {
            return bad("input dims must be positive".into());
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.pool1 == 0 || self.pooled_freq() == 0 {
            return bad(format!("pool {} larger than {} bins", self.pool1, d.freq));
        }
        let checks = [
            ("conv1", self.conv1, d.freq),
            ("conv2", self.conv2, self.pooled_freq()),
            ("conv3", self.conv3, self.pooled_freq()),
        ];
        for (name, spec, freq) in checks {
            let (kf, kt) = spec.kernel;
            if kf == 0 || kt == 0 || spec.out == 0 {
                return bad(format!("{name} kernel and width must be positive"));
            }
            if kf > freq || kt > d.time {
                return bad(format!(
                    "{name} kernel {kf}x{kt} exceeds its {freq}x{} input",
                    d.time
                ));
            }
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        for p in [self.dropout1, self.dropout2] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout rate {p} outside [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return bad("batch-norm momentum must be in [0, 1) and eps positive".into());
        }
        Ok(())
    }

    /// Per-layer input/output sizes in `F x T x C` notation.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let (f, t, c) = (self.input.freq, self.input.time, self.input.channels);
        let pf = self.pooled_freq();
        let (w1, w2, w3) = (self.conv1.out, self.conv2.out, self.conv3.out);
        let row = |layer, input: Vec<usize>, output: Vec<usize>| LayerShape {
            layer,
            input,
            output,
        };
        vec![
            row("conv1+bn+relu", vec![f, t, c], vec![f, t, w1]),
            row("maxpool+dropout", vec![f, t, w1], vec![pf, t, w1]),
            row("conv2+bn+relu", vec![pf, t, w1], vec![pf, t, w2]),
            row("conv3+bn+relu", vec![pf, t, w2], vec![pf, t, w3]),
            row("globalmax+dropout", vec![pf, t, w3], vec![w3]),
            row("dense", vec![w3], vec![self.hidden]),
            row("softmax", vec![self.hidden], vec![self.n_classes]),
        ]
    }

    /// Element counts of every trainable tensor, in declaration order.
    pub fn param_sizes(&self) -> Vec<usize> {
        let c = self.input.channels;
        let conv = |spec: ConvSpec, cin: usize| spec.out * cin * spec.kernel.0 * spec.kernel.1;
        let (w1, w2, w3) = (self.conv1.out, self.conv2.out, self.conv3.out);
        vec![
            conv(self.conv1, c),
            w1,
            w1,
            conv(self.conv2, w1),
            w2,
            w2,
            conv(self.conv3, w2),
            w3,
            w3,
            self.hidden * w3,
            self.hidden,
            self.n_classes * self.hidden,
            self.n_classes,
        ]
    }
}
