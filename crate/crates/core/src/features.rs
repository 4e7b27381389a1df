//! Log mel-band energy front end.
//!
//! Frames are centered (reflect padding of half a frame on each side), so a
//! clip of `S` samples yields `floor(S / hop) + 1` frames. Each frame is Hann
//! windowed, zero padded to the FFT size, and reduced to power. A triangular
//! HTK-mel filterbank (no area normalization) maps power to band energies,
//! which are floored at [`ENERGY_FLOOR`] and log-compressed with `ln`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::MultichannelClip;
use crate::error::{Error, Result};
use crate::tensorio::{Dims, FeatureTensor, ENERGY_FLOOR, LOG_FLOOR};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub frame_len_s: f64,
    pub hop_len_s: f64,
    /// `None` picks the next power of two at or above the frame length.
    pub fft_size: Option<usize>,
    pub mel_fmin_hz: f64,
    /// `None` means Nyquist.
    pub mel_fmax_hz: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_mels: 40,
            frame_len_s: 0.040,
            hop_len_s: 0.020,
            fft_size: None,
            mel_fmin_hz: 0.0,
            mel_fmax_hz: None,
        }
    }
}

impl FeatureConfig {
    pub fn frame_samples(&self, sample_rate_hz: u32) -> usize {
        (self.frame_len_s * f64::from(sample_rate_hz)).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        (self.hop_len_s * f64::from(sample_rate_hz)).round() as usize
    }

    pub fn fft_size(&self, sample_rate_hz: u32) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.frame_samples(sample_rate_hz).next_power_of_two())
    }

    pub fn n_bins(&self, sample_rate_hz: u32) -> usize {
        self.fft_size(sample_rate_hz) / 2 + 1
    }

    pub fn fmax(&self, sample_rate_hz: u32) -> f64 {
        self.mel_fmax_hz
            .unwrap_or(f64::from(sample_rate_hz) / 2.0)
    }

    /// Number of frames for a signal of `len` samples.
    pub fn frames_for(&self, len: usize, sample_rate_hz: u32) -> usize {
        len / self.hop_samples(sample_rate_hz) + 1
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let frame = self.frame_samples(sample_rate_hz);
        let hop = self.hop_samples(sample_rate_hz);
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        if frame == 0 || hop == 0 {
            return Err(Error::Config(format!(
                "frame ({frame}) and hop ({hop}) must span at least one sample"
            )));
        }
        if hop > frame {
            return Err(Error::Config(format!("hop {hop} exceeds frame {frame}")));
        }
        if self.fft_size(sample_rate_hz) < frame {
            return Err(Error::Config(format!(
                "fft size {} below frame length {frame}",
                self.fft_size(sample_rate_hz)
            )));
        }
        let nyquist = f64::from(sample_rate_hz) / 2.0;
        let (lo, hi) = (self.mel_fmin_hz, self.fmax(sample_rate_hz));
        if !(lo >= 0.0 && lo < hi && hi <= nyquist) {
            return Err(Error::Config(format!(
                "mel range [{lo}, {hi}] must satisfy 0 <= fmin < fmax <= {nyquist}"
            )));
        }
        Ok(())
    }
}

/// Power spectrogram, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub n_bins: usize,
    pub n_frames: usize,
    data: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[frame * self.n_bins + bin]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters; row `m` peaks at `centers_hz[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    weights: Vec<f64>,
    /// Non-zero bin range of each row.
    support: Vec<(usize, usize)>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn weight(&self, mel: usize, bin: usize) -> f64 {
        self.weights[mel * self.n_bins + bin]
    }

    pub fn row(&self, mel: usize) -> &[f64] {
        &self.weights[mel * self.n_bins..(mel + 1) * self.n_bins]
    }

    fn apply_into(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let (lo, hi) = self.support[m];
            let row = &self.row(m)[lo..hi];
            *o = row.iter().zip(&power[lo..hi]).map(|(w, p)| w * p).sum();
        }
    }
}

pub fn mel_filterbank(cfg: &FeatureConfig, sample_rate_hz: u32) -> Result<MelFilterbank> {
    cfg.validate(sample_rate_hz)?;
    let n_fft = cfg.fft_size(sample_rate_hz);
    let n_bins = n_fft / 2 + 1;
    let rate = f64::from(sample_rate_hz);
    let (mlo, mhi) = (hz_to_mel(cfg.mel_fmin_hz), hz_to_mel(cfg.fmax(sample_rate_hz)));
    let step = (mhi - mlo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mlo + step * i as f64))
        .collect();
    let mut weights = vec![0.0; cfg.n_mels * n_bins];
    let mut support = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * rate / n_fft as f64;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            *w = up.min(down).max(0.0);
        }
        let lo = row.iter().position(|&w| w > 0.0);
        let hi = row.iter().rposition(|&w| w > 0.0);
        match (lo, hi) {
            (Some(lo), Some(hi)) => support.push((lo, hi + 1)),
            _ => return Err(Error::FilterbankDegenerate { band: m }),
        }
    }
    Ok(MelFilterbank {
        n_mels: cfg.n_mels,
        n_bins,
        weights,
        support,
        centers_hz: edges[1..=cfg.n_mels].to_vec(),
    })
}

fn reflect_index(j: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = j.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reusable front end for one (config, sample rate) pair: FFT plan, window
/// and filterbank are built once and shared read-only.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    sample_rate_hz: u32,
    frame: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(cfg: &FeatureConfig, sample_rate_hz: u32) -> Result<Self> {
        let filterbank = mel_filterbank(cfg, sample_rate_hz)?;
        let frame = cfg.frame_samples(sample_rate_hz);
        let n_fft = cfg.fft_size(sample_rate_hz);
        // periodic Hann
        let window = (0..frame)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(FeatureExtractor {
            cfg: cfg.clone(),
            sample_rate_hz,
            frame,
            hop: cfg.hop_samples(sample_rate_hz),
            n_fft,
            window,
            fft,
            filterbank,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn stft_power(&self, channel: &[f64]) -> Result<PowerSpectrogram> {
        if channel.is_empty() {
            return Err(Error::Shape("cannot frame an empty channel".into()));
        }
        let len = channel.len();
        let n_frames = len / self.hop + 1;
        let n_bins = self.n_fft / 2 + 1;
        let pad = (self.frame / 2) as isize;
        let mut data = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..n_frames {
            let start = (t * self.hop) as isize - pad;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < self.frame {
                    let x = channel[reflect_index(start + i as isize, len)];
                    Complex::new(x * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            data.extend(buf[..n_bins].iter().map(|v| v.norm_sqr()));
        }
        Ok(PowerSpectrogram {
            n_bins,
            n_frames,
            data,
        })
    }

    /// Log mel energies of one channel, `[f][t]` row-major.
    pub fn log_mel(&self, channel: &[f64]) -> Result<Vec<f64>> {
        let spec = self.stft_power(channel)?;
        let n_mels = self.filterbank.n_mels;
        let mut out = vec![0.0; n_mels * spec.n_frames];
        let mut energies = vec![0.0; n_mels];
        for t in 0..spec.n_frames {
            self.filterbank.apply_into(spec.frame(t), &mut energies);
            for (m, &e) in energies.iter().enumerate() {
                out[m * spec.n_frames + t] = log_energy(e);
            }
        }
        Ok(out)
    }

    pub fn extract(&self, clip: &MultichannelClip) -> Result<FeatureTensor> {
        if clip.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::Config(format!(
                "clip sample rate {} differs from extractor rate {}",
                clip.sample_rate_hz(),
                self.sample_rate_hz
            )));
        }
        if clip.is_empty() {
            return Err(Error::Shape("clip has no samples".into()));
        }
        let channels = clip.channels();
        let dims = Dims::new(
            self.filterbank.n_mels,
            clip.len() / self.hop + 1,
            channels,
        );
        let mut data = vec![LOG_FLOOR; dims.len()];
        let mut valid = vec![true; channels];
        for c in 0..channels {
            if clip.is_missing(c) {
                // a zeroed channel floors everywhere; skip the transform
                valid[c] = false;
                continue;
            }
            let plane = self.log_mel(clip.channel(c))?;
            for (cell, v) in plane.into_iter().enumerate() {
                data[cell * channels + c] = v;
            }
        }
        FeatureTensor::new(dims, data, valid)
    }
}

#[inline]
fn log_energy(e: f64) -> f64 {
    if e > ENERGY_FLOOR {
        e.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

pub fn stft_power(channel: &[f64], cfg: &FeatureConfig, sample_rate_hz: u32) -> Result<PowerSpectrogram> {
    FeatureExtractor::new(cfg, sample_rate_hz)?.stft_power(channel)
}

/// `data[f, t, c] = max(ln(melfb . power[:, t]), LOG_FLOOR)`; missing channels
/// are marked invalid.
pub fn extract_features(clip: &MultichannelClip, cfg: &FeatureConfig) -> Result<FeatureTensor> {
    FeatureExtractor::new(cfg, clip.sample_rate_hz())?.extract(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::zero_channels;
    use std::collections::BTreeSet;

    /// O(N^2) DFT power of one windowed, zero-padded frame.
    fn dft_power(frame: &[f64], n_fft: usize) -> Vec<f64> {
        (0..=n_fft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &x) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * ((k * n) % n_fft) as f64 / n_fft as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    /// Independent framing: explicit numpy-style reflect padding.
    fn oracle_frames(x: &[f64], frame: usize, hop: usize) -> Vec<Vec<f64>> {
        let pad = frame / 2;
        let mut padded = Vec::new();
        for i in (1..=pad).rev() {
            padded.push(x[i]);
        }
        padded.extend_from_slice(x);
        for i in 0..pad {
            padded.push(x[x.len() - 2 - i]);
        }
        let n_frames = x.len() / hop + 1;
        (0..n_frames)
            .map(|t| {
                (0..frame)
                    .map(|n| {
                        let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos();
                        padded.get(t * hop + n).copied().unwrap_or(0.0) * w
                    })
                    .collect()
            })
            .collect()
    }

    fn small_cfg() -> FeatureConfig {
        FeatureConfig {
            n_mels: 8,
            frame_len_s: 0.008,
            hop_len_s: 0.004,
            ..Default::default()
        }
    }

    #[test]
    fn ten_seconds_at_16k_gives_501_frames() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.frame_samples(16_000), 640);
        assert_eq!(cfg.hop_samples(16_000), 320);
        assert_eq!(cfg.fft_size(16_000), 1024);
        assert_eq!(cfg.frames_for(160_000, 16_000), 501);
        let ex = FeatureExtractor::new(&cfg, 16_000).unwrap();
        let spec = ex.stft_power(&vec![0.1; 160_000]).unwrap();
        assert_eq!(spec.n_frames, 501);
        assert_eq!(spec.n_bins, 513);
    }

    #[test]
    fn silent_channel_has_zero_power() {
        let spec = stft_power(&[0.0; 400], &small_cfg(), 16_000).unwrap();
        assert!(spec.data.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn sinusoid_matches_dft_oracle() {
        let cfg = FeatureConfig::default();
        let rate = 16_000u32;
        let x: Vec<f64> = (0..4000)
            .map(|n| 0.5 * (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let spec = stft_power(&x, &cfg, rate).unwrap();
        let frames = oracle_frames(&x, 640, 320);
        assert_eq!(frames.len(), spec.n_frames);
        let peak_bin = (1000.0f64 * 1024.0 / 16_000.0).round() as usize;
        for (t, frame) in frames.iter().enumerate() {
            let oracle = dft_power(frame, 1024);
            let scale = oracle.iter().cloned().fold(0.0, f64::max);
            for (k, o) in oracle.iter().enumerate() {
                let err = (spec.get(k, t) - o).abs() / scale;
                assert!(err < 1e-9, "frame {t} bin {k} rel err {err}");
            }
            let argmax = (0..spec.n_bins)
                .max_by(|&a, &b| spec.get(a, t).total_cmp(&spec.get(b, t)))
                .unwrap();
            // edge frames contain the reflected (phase-folded) signal
            let interior = t * 320 >= 320 && t * 320 + 320 <= x.len();
            if interior {
                assert_eq!(argmax, peak_bin, "frame {t}");
            }
        }
    }

    #[test]
    fn filterbank_shape_and_rows() {
        let cfg = FeatureConfig::default();
        let fb = mel_filterbank(&cfg, 16_000).unwrap();
        assert_eq!((fb.n_mels, fb.n_bins), (40, 513));
        for m in 0..fb.n_mels {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0));
            // unimodal: non-decreasing then non-increasing
            let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn filter_centers_follow_mel_grid() {
        let cfg = FeatureConfig {
            n_mels: 24,
            mel_fmin_hz: 50.0,
            mel_fmax_hz: Some(7000.0),
            ..Default::default()
        };
        let fb = mel_filterbank(&cfg, 16_000).unwrap();
        // same grid via natural logs and exp instead of log10/powf
        let to_mel = |f: f64| 2595.0 / std::f64::consts::LN_10 * (f / 700.0).ln_1p();
        let to_hz = |m: f64| 700.0 * (m * std::f64::consts::LN_10 / 2595.0).exp_m1();
        let (a, b) = (to_mel(50.0), to_mel(7000.0));
        for (i, &c) in fb.centers_hz.iter().enumerate() {
            let expect = to_hz(a + (b - a) * (i + 1) as f64 / 25.0);
            assert!((c - expect).abs() < 1e-9 * expect, "{c} vs {expect}");
        }
    }

    #[test]
    fn degenerate_filterbank_rejected() {
        let cfg = FeatureConfig {
            n_mels: 200,
            frame_len_s: 0.008,
            hop_len_s: 0.004,
            ..Default::default()
        };
        let err = mel_filterbank(&cfg, 16_000).unwrap_err();
        assert!(err.to_string().starts_with("filterbank degenerate"));
    }

    #[test]
    fn config_invariants() {
        let mut cfg = FeatureConfig::default();
        cfg.hop_len_s = 0.05;
        assert!(cfg.validate(16_000).is_err());
        cfg = FeatureConfig::default();
        cfg.fft_size = Some(256);
        assert!(cfg.validate(16_000).is_err());
        cfg = FeatureConfig::default();
        cfg.mel_fmax_hz = Some(9000.0);
        assert!(cfg.validate(16_000).is_err());
    }

    fn noise_clip(channels: usize, len: usize) -> MultichannelClip {
        let mut state = 12345u64;
        let samples = (0..channels)
            .map(|_| {
                (0..len)
                    .map(|_| {
                        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.8
                    })
                    .collect()
            })
            .collect();
        MultichannelClip::new(samples, 16_000).unwrap()
    }

    #[test]
    fn white_noise_mel_energies_match_oracle() {
        let cfg = small_cfg();
        let clip = noise_clip(1, 700);
        let tensor = extract_features(&clip, &cfg).unwrap();
        let fb = mel_filterbank(&cfg, 16_000).unwrap();
        let frames = oracle_frames(clip.channel(0), 128, 64);
        for (t, frame) in frames.iter().enumerate() {
            let power = dft_power(frame, 128);
            for m in 0..cfg.n_mels {
                let e: f64 = (0..fb.n_bins).map(|k| fb.weight(m, k) * power[k]).sum();
                let got = tensor.get(m, t, 0).exp();
                assert!((got - e).abs() <= 1e-9 * e, "mel {m} frame {t}: {got} vs {e}");
            }
        }
    }

    #[test]
    fn full_size_tensor_dims() {
        let clip = noise_clip(16, 160_000);
        let t = extract_features(&clip, &FeatureConfig::default()).unwrap();
        assert_eq!(t.dims(), Dims::new(40, 501, 16));
    }

    #[test]
    fn zeroed_channel_is_log_floor_plane() {
        let clip = noise_clip(4, 500);
        let z = zero_channels(&clip, &BTreeSet::from([2])).unwrap();
        let t = extract_features(&z, &small_cfg()).unwrap();
        assert!(t.plane(2).iter().all(|&v| v == LOG_FLOOR));
        assert!(!t.channel_valid()[2]);
        assert!(t.data().iter().all(|v| v.is_finite() && *v >= LOG_FLOOR));
    }

    #[test]
    fn silent_but_present_channel_floors_too() {
        let mut samples = noise_clip(2, 300).samples().to_vec();
        samples[1] = vec![0.0; 300];
        let clip = MultichannelClip::new(samples, 16_000).unwrap();
        let t = extract_features(&clip, &small_cfg()).unwrap();
        assert!(t.plane(1).iter().all(|&v| v == LOG_FLOOR));
        assert!(t.channel_valid()[1]);
    }

    #[test]
    fn shape_law_holds_for_many_lengths() {
        let cfg = small_cfg();
        for len in [1usize, 2, 63, 64, 65, 127, 128, 129, 1000] {
            let clip = noise_clip(1, len);
            let t = extract_features(&clip, &cfg).unwrap();
            assert_eq!(t.dims().time, len / 64 + 1, "len {len}");
        }
    }
}
