use std::path::{Path, PathBuf};

use crate::audio::{load_wav, SyntheticClip};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureExtractor};
use crate::seed::stable_hash;
use crate::tensorio::{read_tensor, DatasetManifest, Dims, FeatureTensor};

/// One clip's features with its label index and fold.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub id: String,
    /// Stable hash of `id`; keys the clip's RNG streams.
    pub uid: u64,
    pub label: usize,
    pub fold: u8,
    pub features: FeatureTensor,
}

/// Features for a whole dataset, all with the same dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub labels: Vec<String>,
    pub clips: Vec<LabeledFeatures>,
}

/// One extractor per sample rate seen so far.
#[derive(Default)]
struct Extractors(Vec<(u32, FeatureExtractor)>);

impl Extractors {
    fn get(&mut self, cfg: &FeatureConfig, sr: u32) -> Result<&FeatureExtractor> {
        let i = match self.0.iter().position(|(r, _)| *r == sr) {
            Some(i) => i,
            None => {
                self.0.push((sr, FeatureExtractor::new(cfg, sr)?));
                self.0.len() - 1
            }
        };
        Ok(&self.0[i].1)
    }
}

/// Where the features of manifest entry `path` live under `feature_dir`.
pub fn feature_path(feature_dir: &Path, entry_path: &str) -> PathBuf {
    feature_dir.join(entry_path).with_extension("chft")
}

impl FeatureSet {
    pub fn new(labels: Vec<String>, clips: Vec<LabeledFeatures>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if let Some(first) = clips.first() {
            let d = first.features.dims();
            if let Some(c) = clips.iter().find(|c| c.features.dims() != d) {
                return Err(Error::Shape(format!(
                    "clip {} has dims {:?}, expected {:?}",
                    c.id,
                    c.features.dims(),
                    d
                )));
            }
        }
        if let Some(c) = clips.iter().find(|c| c.label >= labels.len()) {
            return Err(Error::Config(format!("clip {} has label index {}", c.id, c.label)));
        }
        Ok(FeatureSet { labels, clips })
    }

    /// Extracts features from in-memory synthetic clips. Labels are ordered
    /// by first appearance.
    pub fn from_synthetic(clips: &[SyntheticClip], cfg: &FeatureConfig) -> Result<Self> {
        let mut labels: Vec<String> = Vec::new();
        let mut out = Vec::with_capacity(clips.len());
        let mut extractors = Extractors::default();
        for sc in clips {
            let label = match labels.iter().position(|l| *l == sc.label) {
                Some(i) => i,
                None => {
                    labels.push(sc.label.clone());
                    labels.len() - 1
                }
            };
            let ex = extractors.get(cfg, sc.clip.sample_rate_hz())?;
            out.push(LabeledFeatures {
                id: sc.id.clone(),
                uid: stable_hash(&sc.id),
                label,
                fold: sc.fold,
                features: ex.extract(&sc.clip)?,
            });
        }
        Self::new(labels, out)
    }

    /// Reads precomputed tensors for every manifest entry.
    pub fn load(manifest: &DatasetManifest, feature_dir: &Path) -> Result<Self> {
        let clips = manifest
            .entries
            .iter()
            .map(|e| {
                let label = manifest
                    .label_index(&e.label)
                    .ok_or_else(|| Error::Config(format!("unknown label {:?}", e.label)))?;
                Ok(LabeledFeatures {
                    id: e.path.clone(),
                    uid: stable_hash(&e.path),
                    label,
                    fold: e.fold,
                    features: read_tensor(feature_path(feature_dir, &e.path))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest.label_set.clone(), clips)
    }

    /// Loads audio for every manifest entry and extracts features.
    pub fn extract(manifest: &DatasetManifest, audio_dir: &Path, cfg: &FeatureConfig) -> Result<Self> {
        let mut extractors = Extractors::default();
        let mut clips = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let clip = load_wav(audio_dir.join(&e.path))?;
            let ex = extractors.get(cfg, clip.sample_rate_hz())?;
            clips.push(LabeledFeatures {
                id: e.path.clone(),
                uid: stable_hash(&e.path),
                label: manifest
                    .label_index(&e.label)
                    .ok_or_else(|| Error::Config(format!("unknown label {:?}", e.label)))?,
                fold: e.fold,
                features: ex.extract(&clip)?,
            });
        }
        Self::new(manifest.label_set.clone(), clips)
    }

    pub fn dims(&self) -> Option<Dims> {
        self.clips.first().map(|c| c.features.dims())
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn train_clips(&self, eval_fold: u8) -> Vec<&LabeledFeatures> {
        self.clips.iter().filter(|c| c.fold != eval_fold).collect()
    }

    pub fn eval_clips(&self, eval_fold: u8) -> Vec<&LabeledFeatures> {
        self.clips.iter().filter(|c| c.fold == eval_fold).collect()
    }
}
