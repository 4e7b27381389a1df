use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensorio::{Dims, FeatureTensor};

fn toy_config() -> NetworkConfig {
    let mut c = NetworkConfig::scaled(Dims::new(4, 8, 2), [3, 4, 5], 6, 3);
    c.conv1.kernel = (3, 1);
    c.pool1 = 2;
    c.conv2.kernel = (2, 1);
    c.conv3.kernel = (1, 3);
    c
}

fn random_tensor(dims: Dims, rng: &mut impl Rng) -> FeatureTensor {
    let data = (0..dims.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureTensor::from_data(dims, data).unwrap()
}

fn randomized_network(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(toy_config(), &mut rng).unwrap();
    for p in net.params_mut() {
        p.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    for r in net.running_mut() {
        r.mean.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        r.var.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
    }
    net
}

fn batch_of(n: usize, seed: u64) -> (Batch, Vec<FeatureTensor>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<FeatureTensor> = (0..n).map(|_| random_tensor(Dims::new(4, 8, 2), &mut rng)).collect();
    let refs: Vec<&FeatureTensor> = xs.iter().collect();
    (Batch::from_tensors(&refs).unwrap(), xs)
}

fn grad_check(opts: PassOptions) {
    let mut net = randomized_network(21);
    let (batch, _) = batch_of(3, 22);
    let labels = [0, 2, 1];
    let (_, grads) = net.clone().loss_and_grad(&batch, &labels, opts, None).unwrap();
    let h = 1e-4;
    for (ti, name) in PARAM_NAMES.iter().enumerate() {
        let mut fd = vec![0.0; grads[ti].len()];
        for k in 0..fd.len() {
            let orig = net.params()[ti][k];
            net.params_mut()[ti][k] = orig + h;
            let up = net.loss(&batch, &labels, opts, None).unwrap();
            net.params_mut()[ti][k] = orig - h;
            let down = net.loss(&batch, &labels, opts, None).unwrap();
            net.params_mut()[ti][k] = orig;
            fd[k] = (up - down) / (2.0 * h);
        }
        let diff: f64 = fd.iter().zip(&grads[ti]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt() + grads[ti].iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = if scale == 0.0 { 0.0 } else { diff / scale };
        assert!(rel < 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn gradients_match_finite_differences_frozen_bn() {
    grad_check(PassOptions::INFER);
}

#[test]
fn gradients_match_finite_differences_batch_stats() {
    grad_check(PassOptions::BATCH_NO_DROPOUT);
}

/// Scalar RAdam written directly from the update rule.
fn scalar_radam(w0: f64, steps: usize, cfg: RAdamConfig) -> Vec<f64> {
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * w;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1.powi(t as i32));
        let b2t = cfg.beta2.powi(t as i32);
        let rho_t = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
        if rho_t > 4.0 {
            let r = ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt();
            let v_hat = v / (1.0 - b2t);
            // eps is added to sqrt(v) before bias correction: sqrt(v_hat) + eps / sqrt(1 - b2t)
            w -= cfg.lr * r * m_hat / (v_hat.sqrt() + cfg.eps / (1.0 - b2t).sqrt());
        } else {
            w -= cfg.lr * m_hat;
        }
        out.push(w);
    }
    out
}

#[test]
fn radam_matches_scalar_oracle() {
    let cfg = RAdamConfig {
        lr: 0.05,
        ..RAdamConfig::default()
    };
    let expect = scalar_radam(1.5, 100, cfg);
    let mut opt = RAdam::new(cfg, &[1]);
    let mut p = vec![vec![1.5]];
    for (t, &e) in expect.iter().enumerate() {
        let g = vec![vec![2.0 * p[0][0]]];
        opt.step(&mut p, &g).unwrap();
        assert!((p[0][0] - e).abs() <= 1e-12, "step {}: {} vs {e}", t + 1, p[0][0]);
    }
    // step 1 is a plain momentum step: w1 = w0 - lr * g0
    assert!((expect[0] - (1.5 - 0.05 * 3.0)).abs() < 1e-15);
}

#[test]
fn dropout_preserves_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for rate in [0.2, 0.5] {
        let mut data = vec![1.0; 10_000];
        layers::dropout_forward(&mut data, rate, &mut rng);
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "rate {rate}: mean {mean}");
        let dropped = data.iter().filter(|&&v| v == 0.0).count() as f64 / 1e4;
        assert!((dropped - rate).abs() < 0.02);
    }
}

#[test]
fn zeroed_output_layer_gives_uniform_probabilities() {
    let mut net = randomized_network(4);
    for ti in [11, 12] {
        net.params_mut()[ti].iter_mut().for_each(|v| *v = 0.0);
    }
    let (batch, _) = batch_of(2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mode in [Mode::Infer, Mode::Train] {
        for p in net.forward(&batch, mode, &mut rng).unwrap() {
            assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
    }
}

/// Inference-mode forward pass written directly over `(f, t, c)` indices.
fn naive_infer(net: &Network, x: &FeatureTensor) -> Vec<f64> {
    let cfg = net.config();
    let p = net.params();
    let run = net.running();
    let conv = |input: &Vec<Vec<Vec<f64>>>, w: &[f64], spec: ConvSpec, k: usize, gamma: &[f64], beta: &[f64]| {
        let (cin, fh, tw) = (input.len(), input[0].len(), input[0][0].len());
        let (kh, kw) = spec.kernel;
        let (ph, pw) = ((kh as isize - 1) / 2, (kw as isize - 1) / 2);
        let mut out = vec![vec![vec![0.0; tw]; fh]; spec.out];
        for o in 0..spec.out {
            for f in 0..fh {
                for t in 0..tw {
                    let mut s = 0.0;
                    for i in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let ff = f as isize + u as isize - ph;
                                let tt = t as isize + v as isize - pw;
                                if ff >= 0 && tt >= 0 && (ff as usize) < fh && (tt as usize) < tw {
                                    s += w[((o * cin + i) * kh + u) * kw + v] * input[i][ff as usize][tt as usize];
                                }
                            }
                        }
                    }
                    let norm = (s - run[k].mean[o]) / (run[k].var[o] + cfg.bn_eps).sqrt();
                    out[o][f][t] = (gamma[o] * norm + beta[o]).max(0.0);
                }
            }
        }
        out
    };
    let d = x.dims();
    let input: Vec<Vec<Vec<f64>>> = (0..d.channels)
        .map(|c| (0..d.freq).map(|f| (0..d.time).map(|t| x.get(f, t, c)).collect()).collect())
        .collect();
    let a1 = conv(&input, &p[0], cfg.conv1, 0, &p[1], &p[2]);
    let pooled: Vec<Vec<Vec<f64>>> = a1
        .iter()
        .map(|plane| {
            (0..d.freq / cfg.pool1)
                .map(|y| {
                    (0..d.time)
                        .map(|t| (0..cfg.pool1).map(|u| plane[y * cfg.pool1 + u][t]).fold(f64::NEG_INFINITY, f64::max))
                        .collect()
                })
                .collect()
        })
        .collect();
    let a2 = conv(&pooled, &p[3], cfg.conv2, 1, &p[4], &p[5]);
    let a3 = conv(&a2, &p[6], cfg.conv3, 2, &p[7], &p[8]);
    let g: Vec<f64> = a3
        .iter()
        .map(|plane| plane.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let h: Vec<f64> = (0..cfg.hidden)
        .map(|o| (p[10][o] + (0..g.len()).map(|i| p[9][o * g.len() + i] * g[i]).sum::<f64>()).max(0.0))
        .collect();
    let logits: Vec<f64> = (0..cfg.n_classes)
        .map(|o| p[12][o] + (0..h.len()).map(|i| p[11][o * h.len() + i] * h[i]).sum::<f64>())
        .collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    logits.iter().map(|l| l.exp() / z).collect()
}

#[test]
fn inference_matches_naive_oracle() {
    let net = randomized_network(31);
    let (batch, xs) = batch_of(4, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let probs = net.forward(&batch, Mode::Infer, &mut rng).unwrap();
    for (x, p) in xs.iter().zip(&probs) {
        let expect = naive_infer(&net, x);
        for (a, b) in p.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
    // inference ignores the rng and is repeatable
    let mut other = ChaCha8Rng::seed_from_u64(99);
    other.next_u64();
    assert_eq!(net.forward(&batch, Mode::Infer, &mut other).unwrap(), probs);
}

#[test]
fn full_size_network_traces_table_shapes() {
    let cfg = NetworkConfig::full_size(9);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Network::new(cfg.clone(), &mut rng).unwrap();
    let x = FeatureTensor::silent(cfg.input);
    let shapes = net.trace_shapes(&Batch::from_tensors(&[&x]).unwrap()).unwrap();
    let expect: Vec<Vec<usize>> = cfg.layer_shapes().into_iter().map(|l| l.output).collect();
    assert_eq!(shapes, expect);
    assert_eq!(shapes[0], vec![40, 501, 64]);
    assert_eq!(shapes[4], vec![256]);
}

#[test]
fn training_mode_updates_running_stats_only_when_asked() {
    let mut net = randomized_network(2);
    let before = net.running().to_vec();
    let (batch, _) = batch_of(3, 3);
    net.loss_and_grad(&batch, &[0, 1, 2], PassOptions::BATCH_NO_DROPOUT, None).unwrap();
    assert_eq!(net.running(), &before[..]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    net.loss_and_grad(&batch, &[0, 1, 2], PassOptions::TRAIN, Some(&mut rng)).unwrap();
    assert_ne!(net.running(), &before[..]);
}

/// Dropout feeds a linear layer, so averaged train-mode pre-activations must
/// approach the inference pre-activation (the later ReLU/softmax bias a
/// whole-network average, so the property is checked where it is exact in
/// expectation).
#[test]
fn dropout_average_approaches_inference_output() {
    let net = randomized_network(12);
    let cfg = net.config();
    let (din, dout) = (cfg.conv3.out, cfg.hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g: Vec<f64> = (0..din).map(|_| rng.random_range(0.5..2.0)).collect();
    let w: Vec<f64> = net.params()[9].iter().map(|v| v.abs() + 0.1).collect();
    let b = vec![0.1; dout];
    let infer = layers::dense_forward(&g, 1, din, &w, &b);
    let draws = 10_000;
    let mut mean = vec![0.0; dout];
    for _ in 0..draws {
        let mut x = g.clone();
        layers::dropout_forward(&mut x, cfg.dropout2, &mut rng);
        let y = layers::dense_forward(&x, 1, din, &w, &b);
        mean.iter_mut().zip(&y).for_each(|(m, v)| *m += v / draws as f64);
    }
    for (m, i) in mean.iter().zip(&infer) {
        assert!((m - i).abs() <= 0.02 * i.abs(), "{m} vs {i}");
    }
}
