use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{write_wav, MultichannelClip};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensorio::{file_checksum, save_manifest, DatasetManifest, ManifestEntry};

/// Peak amplitude shared by a scene's tones. Noise level is set relative to
/// a single full-amplitude tone of this size.
const TONE_AMPLITUDE: f64 = 0.3;
const MICS_PER_ARRAY: usize = 4;

const SCENE_NAMES: [&str; 9] = [
    "absence",
    "cooking",
    "dishwashing",
    "eating",
    "other",
    "social_activity",
    "vacuum_cleaning",
    "watching_tv",
    "working",
];

/// Recipe for one synthetic multichannel scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub label: String,
    pub tone_freqs_hz: Vec<f64>,
    pub noise_band: (f64, f64),
    pub per_channel_gain: Vec<f64>,
    pub per_channel_delay_samples: Vec<usize>,
    /// Tone-to-noise ratio; `f64::INFINITY` disables the noise.
    pub snr_db: f64,
}

impl SceneSpec {
    fn validate(&self, channels: usize, len: usize, sample_rate_hz: u32) -> Result<()> {
        if self.per_channel_gain.len() != channels || self.per_channel_delay_samples.len() != channels
        {
            return Err(Error::SpecArity(format!(
                "spec has {} gains and {} delays for {channels} channels",
                self.per_channel_gain.len(),
                self.per_channel_delay_samples.len()
            )));
        }
        let nyquist = f64::from(sample_rate_hz) / 2.0;
        if let Some(f) = self
            .tone_freqs_hz
            .iter()
            .find(|&&f| !(f > 0.0 && f < nyquist))
        {
            return Err(Error::Config(format!("tone {f} Hz outside (0, {nyquist})")));
        }
        if let Some(g) = self
            .per_channel_gain
            .iter()
            .find(|&&g| !(g > 0.0 && g <= 1.0))
        {
            return Err(Error::Config(format!("channel gain {g} outside (0, 1]")));
        }
        if let Some(d) = self.per_channel_delay_samples.iter().find(|&&d| d >= len) {
            return Err(Error::Config(format!("delay {d} not below clip length {len}")));
        }
        let (lo, hi) = self.noise_band;
        if self.snr_db.is_finite() && !(lo >= 0.0 && lo < hi && hi <= nyquist) {
            return Err(Error::Config(format!("noise band ({lo}, {hi}) invalid")));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db is NaN".into()));
        }
        Ok(())
    }
}

/// Renders a scene: channel `c` is `gain[c]` times the tone mixture plus
/// band-limited noise, both delayed by `delay[c]` samples, clamped to [-1, 1].
pub fn synth_clip(
    spec: &SceneSpec,
    duration_s: f64,
    sample_rate_hz: u32,
    channels: usize,
    seed: u64,
) -> Result<MultichannelClip> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Config(format!("duration {duration_s} must be positive")));
    }
    if sample_rate_hz == 0 {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    let len = (duration_s * f64::from(sample_rate_hz)).round() as usize;
    if len == 0 {
        return Err(Error::Config("clip shorter than one sample".into()));
    }
    spec.validate(channels, len, sample_rate_hz)?;
    let mut rng = rng_for(seed, &[]);
    let rate = f64::from(sample_rate_hz);
    let max_delay = spec.per_channel_delay_samples.iter().copied().max().unwrap_or(0);

    let noise = if spec.snr_db.is_finite() {
        let rms = TONE_AMPLITUDE / 2f64.sqrt() * 10f64.powf(-spec.snr_db / 20.0);
        band_noise(len + max_delay, spec.noise_band, rate, rms, &mut rng)
    } else {
        Vec::new()
    };

    let amp = if spec.tone_freqs_hz.is_empty() {
        0.0
    } else {
        TONE_AMPLITUDE / spec.tone_freqs_hz.len() as f64
    };
    let samples = (0..channels)
        .map(|c| {
            let gain = spec.per_channel_gain[c];
            let delay = spec.per_channel_delay_samples[c];
            (0..len)
                .map(|n| {
                    let t = (n as f64 - delay as f64) / rate;
                    let tones: f64 = spec
                        .tone_freqs_hz
                        .iter()
                        .map(|f| amp * (2.0 * PI * f * t).sin())
                        .sum();
                    let nz = if noise.is_empty() {
                        0.0
                    } else {
                        noise[n + max_delay - delay]
                    };
                    (gain * (tones + nz)).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    let clip = MultichannelClip::new(samples, sample_rate_hz)?;
    Ok(clip.with_label(spec.label.clone()))
}

/// White Gaussian noise restricted to `[lo, hi]` Hz by zeroing FFT bins, scaled to `rms`.
fn band_noise(len: usize, band: (f64, f64), rate: f64, rms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let bin = k.min(len - k);
        let f = bin as f64 * rate / len as f64;
        if f < band.0 || f > band.1 {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|v| v.re).collect();
    let power = out.iter().map(|v| v * v).sum::<f64>() / len as f64;
    if power > 0.0 {
        let scale = rms / power.sqrt();
        out.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Scene names: the nine home-activity scenes first, then `scene_NN`.
pub fn scene_labels(n_classes: usize) -> Vec<String> {
    (0..n_classes)
        .map(|k| match SCENE_NAMES.get(k) {
            Some(name) => (*name).to_string(),
            None => format!("scene_{k:02}"),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetConfig {
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub channels: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        SyntheticDatasetConfig {
            n_classes: 9,
            clips_per_class: 10,
            channels: 16,
            duration_s: 10.0,
            sample_rate_hz: 16_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub id: String,
    pub label: String,
    pub fold: u8,
    pub clip: MultichannelClip,
}

/// Class template: tones interleaved on a log grid so classes never share a
/// tone, and a class-specific noise band.
fn class_template(class: usize, n_classes: usize, rate: f64) -> (Vec<f64>, (f64, f64)) {
    let nyquist = rate / 2.0;
    let lo = 150.0f64.min(nyquist * 0.1);
    let hi = nyquist * 0.7;
    let n_tones = 3 * n_classes;
    let ratio = (hi / lo).powf(1.0 / (n_tones - 1) as f64);
    let tones = (0..3).map(|j| lo * ratio.powi((class + j * n_classes) as i32)).collect();
    let band_lo = 100.0f64.min(nyquist * 0.05);
    let band_hi = nyquist * 0.9;
    let band_ratio = (band_hi / band_lo).powf(1.0 / n_classes as f64);
    let band = (
        band_lo * band_ratio.powi(class as i32),
        band_lo * band_ratio.powi(class as i32 + 1),
    );
    (tones, band)
}

/// Per-clip scene: jittered class tones, random array placement (arrays of
/// four mics share a delay offset), random gains and SNR.
fn clip_spec(label: &str, class: usize, cfg: &SyntheticDatasetConfig, rng: &mut ChaCha8Rng) -> SceneSpec {
    let rate = f64::from(cfg.sample_rate_hz);
    let (base_tones, band) = class_template(class, cfg.n_classes, rate);
    let mut tones = Vec::with_capacity(base_tones.len());
    for f in &base_tones {
        if rng.random_bool(0.75) {
            tones.push(f * (1.0 + rng.random_range(-0.03..0.03)));
        }
    }
    if tones.is_empty() {
        tones.push(base_tones[rng.random_range(0..base_tones.len())]);
    }
    let len = (cfg.duration_s * rate).round() as usize;
    let max_offset = ((0.02 * rate) as usize).min(len.saturating_sub(8) / 2);
    let arrays = cfg.channels.div_ceil(MICS_PER_ARRAY);
    let placement: Vec<(usize, f64)> = (0..arrays)
        .map(|_| {
            (
                rng.random_range(0..=max_offset),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let mut gains = Vec::with_capacity(cfg.channels);
    let mut delays = Vec::with_capacity(cfg.channels);
    for c in 0..cfg.channels {
        let (offset, array_gain) = placement[c / MICS_PER_ARRAY];
        let mic = c % MICS_PER_ARRAY;
        delays.push((offset + mic).min(len - 1));
        let g: f64 = array_gain * rng.random_range(0.9..1.0);
        gains.push(g.clamp(1e-3, 1.0));
    }
    SceneSpec {
        label: label.to_string(),
        tone_freqs_hz: tones,
        noise_band: band,
        per_channel_gain: gains,
        per_channel_delay_samples: delays,
        snr_db: rng.random_range(0.0..12.0),
    }
}

/// Generates the labeled clips in memory. Fold ids are assigned round-robin
/// within each class, so folds are class-balanced.
pub fn synthesize_dataset(cfg: &SyntheticDatasetConfig) -> Result<Vec<SyntheticClip>> {
    if cfg.n_classes < 2 {
        return Err(Error::Config("at least two classes are required".into()));
    }
    if cfg.channels == 0 {
        return Err(Error::Config("at least one channel is required".into()));
    }
    let labels = scene_labels(cfg.n_classes);
    let mut out = Vec::with_capacity(cfg.n_classes * cfg.clips_per_class);
    for (class, label) in labels.iter().enumerate() {
        for j in 0..cfg.clips_per_class {
            let mut rng = rng_for(cfg.seed, &[0, class as u64, j as u64]);
            let spec = clip_spec(label, class, cfg, &mut rng);
            let clip_seed = crate::seed::derive_seed(cfg.seed, &[1, class as u64, j as u64]);
            let clip = synth_clip(&spec, cfg.duration_s, cfg.sample_rate_hz, cfg.channels, clip_seed)?;
            out.push(SyntheticClip {
                id: format!("{label}_{j:04}"),
                label: label.clone(),
                fold: (j % 4) as u8,
                clip,
            });
        }
    }
    Ok(out)
}

/// Writes `<out_dir>/<label>/<clip_id>.wav` for every clip plus `manifest.tsv`.
pub fn make_synthetic_dataset(cfg: &SyntheticDatasetConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let clips = synthesize_dataset(cfg)?;
    let mut manifest = DatasetManifest::new(scene_labels(cfg.n_classes));
    for label in &manifest.label_set {
        let dir = out_dir.join(label);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for sc in clips {
        let rel = format!("{}/{}.wav", sc.label, sc.id);
        let path = out_dir.join(&rel);
        write_wav(&sc.clip, &path)?;
        manifest.entries.push(ManifestEntry {
            path: rel,
            label: sc.label,
            fold: sc.fold,
            duration_s: sc.clip.duration_s(),
            channel_count: sc.clip.channels(),
            checksum: file_checksum(&path)?,
        });
    }
    save_manifest(&manifest, out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
