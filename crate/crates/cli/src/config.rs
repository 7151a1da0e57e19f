//! File-backed run configuration.

use std::path::{Path, PathBuf};

use dmfp_core::baselines::{BaselineConfig, BaselineKind};
use dmfp_core::competence::CompetenceOptions;
use dmfp_core::data::{PrivacyLabel, SplitSpec};
use dmfp_core::fusion::{Fallback, FusionConfig, Variant};
use dmfp_core::linear::TrainConfig;
use dmfp_core::neighbors::NeighborhoodConfig;
use dmfp_core::pipeline::{PipelineConfig, Systems};
use dmfp_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Dataset manifest; synthetic data from `[synth]` when absent.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSection {
    pub threshold: f64,
    pub fallback: Fallback,
    pub literal_agreement: bool,
    pub half_posterior_label: PrivacyLabel,
}

impl Default for FusionSection {
    fn default() -> Self {
        let f = FusionConfig::default();
        FusionSection {
            threshold: f.threshold,
            fallback: f.fallback,
            literal_agreement: f.literal_agreement,
            half_posterior_label: f.half_posterior_label,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemsSection {
    /// Ablation variants trained next to full DMFP, e.g. "NoPhi3".
    pub variants: Vec<String>,
    /// Baselines by name, e.g. "majority-vote".
    pub baselines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub k_v: Vec<usize>,
    pub k_p: Vec<usize>,
    pub folds: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            k_v: vec![100, 300, 500, 700, 900],
            k_p: vec![20, 50, 100, 150],
            folds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateSection {
    /// Number of consecutive seeds, starting at the split seed.
    pub seeds: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { seeds: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root under which run directories are created.
    pub out: PathBuf,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub competence_train: TrainConfig,
    pub competence: CompetenceOptions,
    pub neighborhood: NeighborhoodConfig,
    pub fusion: FusionSection,
    pub baselines: BaselineConfig,
    pub systems: SystemsSection,
    pub sweep: SweepSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("runs"),
            data: DataSection::default(),
            synth: SynthConfig::default(),
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            competence_train: TrainConfig::default(),
            competence: CompetenceOptions::default(),
            neighborhood: NeighborhoodConfig::default(),
            fusion: FusionSection::default(),
            baselines: BaselineConfig::default(),
            systems: SystemsSection::default(),
            sweep: SweepSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

/// A parsed configuration plus the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Parses TOML text, rejecting every unknown key at once.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let value: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| {
            CliError::Config {
                message: format!("invalid TOML: {}", e.to_string().trim()),
                keys: vec![],
            }
        })?;
        let mut unknown = Vec::new();
        let cfg: RunConfig = serde_ignored::deserialize(value, |path| unknown.push(path.to_string()))
            .map_err(|e| CliError::Config {
                message: e.to_string(),
                keys: vec![],
            })?;
        if !unknown.is_empty() {
            return Err(CliError::Config {
                message: format!("unknown configuration keys: {}", unknown.join(", ")),
                keys: unknown,
            });
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
        match path {
            None => Ok(LoadedConfig {
                config: RunConfig::default(),
                base_dir: PathBuf::from("."),
            }),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config {
                    message: format!("cannot read {}: {e}", p.display()),
                    keys: vec![],
                })?;
                Ok(LoadedConfig {
                    config: RunConfig::from_toml(&text)?,
                    base_dir: p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
                })
            }
        }
    }

    /// Replaces every seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
        self.competence_train.seed = seed;
    }

    /// Every invalid value, keyed by section or field.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut check = |key: &str, r: dmfp_core::Result<()>| {
            if let Err(e) = r {
                out.push((key.to_string(), e.to_string()));
            }
        };
        check("synth", self.synth.validate());
        check("split", self.split.validate());
        check("train", self.train.validate());
        check("competence_train", self.competence_train.validate());
        check("neighborhood", self.neighborhood.validate());
        check("fusion", self.fusion_config().validate());
        if self.sweep.k_v.is_empty() || self.sweep.k_v.contains(&0) {
            out.push(("sweep.k_v".into(), "needs at least one value, each at least 1".into()));
        }
        if self.sweep.k_p.is_empty() || self.sweep.k_p.contains(&0) {
            out.push(("sweep.k_p".into(), "needs at least one value, each at least 1".into()));
        }
        if self.sweep.folds < 2 {
            out.push(("sweep.folds".into(), "needs at least 2 folds".into()));
        }
        if self.evaluate.seeds == 0 {
            out.push(("evaluate.seeds".into(), "needs at least one seed".into()));
        }
        for (i, v) in self.systems.variants.iter().enumerate() {
            if let Err(e) = v.parse::<Variant>() {
                out.push((format!("systems.variants[{i}]"), e.to_string()));
            }
        }
        for (i, b) in self.systems.baselines.iter().enumerate() {
            if let Err(e) = b.parse::<BaselineKind>() {
                out.push((format!("systems.baselines[{i}]"), e.to_string()));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let problems = self.problems();
        if problems.is_empty() {
            return Ok(());
        }
        Err(CliError::Config {
            message: problems
                .iter()
                .map(|(k, m)| format!("{k}: {m}"))
                .collect::<Vec<_>>()
                .join("; "),
            keys: problems.into_iter().map(|(k, _)| k).collect(),
        })
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            threshold: self.fusion.threshold,
            fallback: self.fusion.fallback,
            ncfg: self.neighborhood.clone(),
            literal_agreement: self.fusion.literal_agreement,
            half_posterior_label: self.fusion.half_posterior_label,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            split: self.split.clone(),
            train: self.train.clone(),
            competence_train: self.competence_train.clone(),
            competence: self.competence.clone(),
            fusion: self.fusion_config(),
            baselines: self.baselines.clone(),
        }
    }

    /// Assumes [`RunConfig::validate`] passed.
    pub fn systems(&self) -> Systems {
        Systems {
            variants: self.systems.variants.iter().filter_map(|v| v.parse().ok()).collect(),
            baselines: self.systems.baselines.iter().filter_map(|b| b.parse().ok()).collect(),
        }
    }

    /// SHA-256 over the canonical JSON form, excluding the output root.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = RunConfig::from_toml("bogus = 1\n[fusion]\nthreshold = 0.6\ncolour = 2\n[neighborhood]\nkv = 3\n")
            .unwrap_err();
        match err {
            CliError::Config { keys, .. } => assert_eq!(keys, ["bogus", "fusion.colour", "neighborhood.kv"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_all_listed() {
        let c = RunConfig::from_toml(
            "[fusion]\nthreshold = 1.5\n[neighborhood]\nk_v = 0\n[systems]\nvariants = [\"NoPhi9\"]\n",
        )
        .unwrap();
        let keys: Vec<String> = c.problems().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, ["neighborhood", "fusion", "systems.variants[0]"]);
    }

    #[test]
    fn hash_tracks_content_not_output_root() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.set_seed(9);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
