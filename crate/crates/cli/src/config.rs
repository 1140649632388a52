//! Run configuration shared by every subcommand, seed sub-streams and the
//! resolved-config echo.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use shapelinker::aligner::synthetic::SyntheticConfig;
use shapelinker::aligner::{TrainConfig, DEFAULT_EMBED_DIM, DEFAULT_HEADS};
use shapelinker::rl::{PretrainConfig, RlConfig};
use shapelinker::scoring::ScoringConfig;
use shapelinker::surface::SurfaceParams;

/// Aligner architecture and the held-out share of a manifest without
/// explicit splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignerBlock {
    pub embed_dim: usize,
    pub heads: usize,
    pub val_fraction: f64,
}

impl Default for AlignerBlock {
    fn default() -> Self {
        AlignerBlock {
            embed_dim: DEFAULT_EMBED_DIM,
            heads: DEFAULT_HEADS,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacBlock {
    pub iterations: usize,
    /// Triangle edge tolerance (Å).
    pub inlier_threshold: f64,
}

impl Default for RansacBlock {
    fn default() -> Self {
        RansacBlock {
            iterations: 1000,
            inlier_threshold: 1.0,
        }
    }
}

/// Optional inputs of the `rl` pipeline. Relative paths are resolved against
/// the config file's directory. Missing entries fall back to bundled data or
/// to training from scratch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    /// SMILES corpus for the prior; defaults to the bundled linker set.
    pub corpus: Option<PathBuf>,
    /// Prior checkpoint; pretrained on `corpus` when absent.
    pub prior: Option<PathBuf>,
    /// Aligner checkpoint; trained on synthetic pairs when absent.
    pub aligner: Option<PathBuf>,
    /// Reference point cloud (XYZ).
    pub reference_cloud: Option<PathBuf>,
    /// Reference atoms (XYZ or molfile) whose surface becomes the cloud;
    /// defaults to the bundled ligand.
    pub reference_atoms: Option<PathBuf>,
    /// Known SMILES for novelty; defaults to `corpus`.
    pub reference_smiles: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every module seed below is derived from it.
    pub rng_seed: u64,
    pub surface: SurfaceParams,
    pub synthetic: SyntheticConfig,
    pub aligner: AlignerBlock,
    pub train: TrainConfig,
    pub ransac: RansacBlock,
    pub scoring: ScoringConfig,
    pub pretrain: PretrainConfig,
    pub rl: RlConfig,
    /// Molecules sampled from the final agent.
    pub samples: usize,
    pub inputs: Inputs,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rng_seed: 0,
            surface: SurfaceParams::default(),
            synthetic: SyntheticConfig {
                pairs: 220,
                ..Default::default()
            },
            aligner: AlignerBlock::default(),
            train: TrainConfig::default(),
            ransac: RansacBlock::default(),
            scoring: ScoringConfig::default(),
            pretrain: PretrainConfig::default(),
            rl: RlConfig::default(),
            samples: 5000,
            inputs: Inputs::default(),
        }
    }
}

/// Stable 64-bit seed for a named stream: FNV-1a of the name mixed into the
/// root seed, finished with a SplitMix64 round.
pub fn substream(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Named streams used by the pipelines.
pub mod stream {
    pub const SURFACE: &str = "surface";
    pub const SYNTHETIC: &str = "synthetic";
    pub const INIT: &str = "init";
    pub const TRAIN: &str = "train";
    pub const RANSAC: &str = "ransac";
    pub const EMBED: &str = "embed";
    pub const PRETRAIN: &str = "pretrain";
    pub const RL: &str = "rl";
    pub const SAMPLE: &str = "sample";
}

impl RunConfig {
    /// Reads `path` (or defaults), applies a seed override and derives every
    /// module seed. Relative input paths become relative to the config file.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let mut c: RunConfig =
                    serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new("."));
                c.inputs.resolve(base);
                c
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            config.rng_seed = s;
        }
        config.derive_seeds();
        config.validate()?;
        Ok(config)
    }

    pub fn seed(&self, name: &str) -> u64 {
        substream(self.rng_seed, name)
    }

    fn derive_seeds(&mut self) {
        self.surface.rng_seed = self.seed(stream::SURFACE);
        self.scoring.surface.rng_seed = self.seed(stream::SURFACE);
        self.synthetic.seed = self.seed(stream::SYNTHETIC);
        self.train.rng_seed = self.seed(stream::TRAIN);
        self.scoring.embed_seed = self.seed(stream::EMBED);
        self.pretrain.seed = self.seed(stream::PRETRAIN);
        self.rl.rng_seed = self.seed(stream::RL);
    }

    fn validate(&self) -> Result<()> {
        self.surface.validate()?;
        self.train.validate()?;
        self.scoring.validate()?;
        self.pretrain.validate()?;
        self.rl.validate()?;
        if !(0.0..1.0).contains(&self.aligner.val_fraction) {
            anyhow::bail!(shapelinker::Error::InvalidInput(format!(
                "aligner.val_fraction must be in [0, 1), got {}",
                self.aligner.val_fraction
            )));
        }
        Ok(())
    }

    /// Writes the resolved configuration next to the outputs.
    pub fn echo(&self, out: &Path) -> Result<()> {
        crate::io::write_json(&out.join("config.json"), self)
    }
}

impl Inputs {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.prior,
            &mut self.aligner,
            &mut self.reference_cloud,
            &mut self.reference_atoms,
            &mut self.reference_smiles,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ_and_repeat() {
        assert_eq!(substream(7, "rl"), substream(7, "rl"));
        assert_ne!(substream(7, "rl"), substream(7, "sample"));
        assert_ne!(substream(7, "rl"), substream(8, "rl"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"rng_seed": 1, "bogus": 2}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"rl": {"sigmaa": 2}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"rl": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.rl.epochs, 3);
        assert_eq!(c.rl.sigma, 120.0);
    }

    #[test]
    fn bundled_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        for name in ["synthetic.json", "demo_rl.json"] {
            RunConfig::load(Some(&dir.join(name)), None).unwrap();
        }
    }

    #[test]
    fn seed_override_reaches_every_module() {
        let a = RunConfig::load(None, Some(1)).unwrap();
        let b = RunConfig::load(None, Some(2)).unwrap();
        assert_ne!(a.rl.rng_seed, b.rl.rng_seed);
        assert_ne!(a.surface.rng_seed, b.surface.rng_seed);
        assert_ne!(a.pretrain.seed, b.pretrain.seed);
    }
}
