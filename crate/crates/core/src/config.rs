//! TOML run configuration. Unknown keys are rejected so typos surface early.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cipher::{self, ChaosKey};
use crate::data::{
    MissingFeatureSpec, PartitionMode, PartitionSpec, SplitRatios, DEFAULT_MISSING_TOKENS, MAX_SMALL_CAP,
};
use crate::dp::DpConfig;
use crate::error::{Error, Result};
use crate::federation::{FederationConfig, ModeKind, PrivacyMode};
use crate::nn::NetworkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub label_column: String,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
}

fn default_missing_tokens() -> Vec<String> {
    DEFAULT_MISSING_TOKENS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    /// 0 means full-batch.
    pub batch_size: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden: NetworkConfig::HIDDEN.to_vec(),
            dropout: 0.3,
            learning_rate: 0.01,
            batch_size: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub participants: usize,
    pub rounds_max: usize,
    pub local_epochs: usize,
    pub val_accuracy_threshold: Option<f64>,
}

impl Default for FederationSection {
    fn default() -> Self {
        Self {
            participants: 5,
            rounds_max: FederationConfig::DEFAULT_ROUNDS,
            local_epochs: FederationConfig::DEFAULT_LOCAL_EPOCHS,
            val_accuracy_threshold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Even,
    Proportions,
    ForcedSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub kind: PartitionKind,
    pub fractions: Option<Vec<f64>>,
    pub min_small: Option<usize>,
    pub small_cap: Option<f64>,
    pub label_skew: Option<Vec<f64>>,
    pub split: [f64; 3],
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            kind: PartitionKind::Even,
            fractions: None,
            min_small: None,
            small_cap: None,
            label_skew: None,
            split: [0.70, 0.15, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingFeatureSection {
    pub participant: usize,
    pub feature: String,
    pub donor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSection {
    pub clip_norm: f64,
    pub noise_scale: f64,
    pub lot_size: usize,
    pub delta: f64,
}

impl Default for DpSection {
    fn default() -> Self {
        let d = DpConfig::default();
        Self {
            clip_norm: d.clip_norm,
            noise_scale: d.noise_scale,
            lot_size: d.lot_size,
            delta: d.delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosSection {
    pub r: f64,
    pub burn_in: u32,
}

impl Default for ChaosSection {
    fn default() -> Self {
        Self {
            r: cipher::DEFAULT_R,
            burn_in: cipher::DEFAULT_BURN_IN,
        }
    }
}

fn default_modes() -> Vec<ModeKind> {
    ModeKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<ModeKind>,
    /// Relative paths resolve against the config file's directory.
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub partition: PartitionSection,
    pub missing_feature: Option<MissingFeatureSection>,
    #[serde(default)]
    pub dp: DpSection,
    #[serde(default)]
    pub chaos: ChaosSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn field(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.resolve(&self.dataset.path)
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.out_dir.as_deref().map(|p| self.resolve(p))
    }

    /// Checks every cross-field invariant. `n_features` is the dataset's
    /// feature count when known.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required"));
        }
        if self.modes.is_empty() {
            return Err(field("modes", "at least one mode is required"));
        }
        let data_path = self.dataset_path();
        if !data_path.is_file() {
            return Err(field("dataset.path", format!("{} does not exist", data_path.display())));
        }
        if self.dataset.label_column.is_empty() {
            return Err(field("dataset.label_column", "must not be empty"));
        }

        let n = &self.network;
        if n.hidden.len() != 4 {
            return Err(field(
                "network.hidden",
                format!("expected 4 hidden widths, got {}", n.hidden.len()),
            ));
        }
        if let Some(i) = n.hidden.iter().position(|&w| w == 0) {
            return Err(field(&format!("network.hidden[{i}]"), "width must be positive"));
        }
        if !(0.0..1.0).contains(&n.dropout) {
            return Err(field("network.dropout", "must lie in [0, 1)"));
        }
        if !(n.learning_rate > 0.0 && n.learning_rate.is_finite()) {
            return Err(field("network.learning_rate", "must be positive"));
        }

        let f = &self.federation;
        if f.participants < 2 {
            return Err(field("federation.participants", "must be at least 2"));
        }
        if f.local_epochs == 0 {
            return Err(field("federation.local_epochs", "must be at least 1"));
        }
        if let Some(t) = f.val_accuracy_threshold {
            if !t.is_finite() {
                return Err(field("federation.val_accuracy_threshold", "must be finite"));
            }
        }

        let p = &self.partition;
        match p.kind {
            PartitionKind::Even => {}
            PartitionKind::Proportions => match &p.fractions {
                None => return Err(field("partition.fractions", "required when kind = \"proportions\"")),
                Some(fr) => {
                    if fr.len() != f.participants {
                        return Err(field(
                            "partition.fractions",
                            format!("{} entries for {} participants", fr.len(), f.participants),
                        ));
                    }
                    let sum: f64 = fr.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 || fr.iter().any(|&x| x.is_nan() || x <= 0.0) {
                        return Err(field(
                            "partition.fractions",
                            format!("must be positive and sum to 1 (sum {sum})"),
                        ));
                    }
                }
            },
            PartitionKind::ForcedSmall => {
                let cap = p.small_cap.unwrap_or(MAX_SMALL_CAP);
                if !(cap > 0.0 && cap <= MAX_SMALL_CAP) {
                    return Err(field("partition.small_cap", format!("must be in (0, {MAX_SMALL_CAP}]")));
                }
                let k = p.min_small.unwrap_or(2);
                if k == 0 || k >= f.participants {
                    return Err(field(
                        "partition.min_small",
                        format!("must be between 1 and {}", f.participants - 1),
                    ));
                }
            }
        }
        if let Some(ls) = &p.label_skew {
            if ls.len() != f.participants {
                return Err(field(
                    "partition.label_skew",
                    format!("{} entries for {} participants", ls.len(), f.participants),
                ));
            }
            if ls.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(field("partition.label_skew", "rates must lie in [0, 1]"));
            }
        }
        SplitRatios {
            train: p.split[0],
            val: p.split[1],
            test: p.split[2],
        }
        .validate()
        .map_err(|_| field("partition.split", "ratios must be positive and sum to 1"))?;

        if let Some(m) = &self.missing_feature {
            if !(1..=f.participants).contains(&m.participant) {
                return Err(field(
                    "missing_feature.participant",
                    format!("must be in 1..={}", f.participants),
                ));
            }
            if m.feature.is_empty() {
                return Err(field("missing_feature.feature", "must name a column"));
            }
            if let Some(d) = m.donor {
                if !(1..=f.participants).contains(&d) || d == m.participant {
                    return Err(field("missing_feature.donor", "must be a different participant"));
                }
            }
        }

        self.dp_config().validate().map_err(|e| field("dp", e))?;
        ChaosKey::new(self.chaos.r, 0.5, self.chaos.burn_in).map_err(|e| field("chaos.r", e))?;
        Ok(())
    }

    pub fn network_config(&self, n_features: usize, seed: u64) -> NetworkConfig {
        let mut layer_sizes = vec![n_features];
        layer_sizes.extend_from_slice(&self.network.hidden);
        layer_sizes.push(1);
        NetworkConfig {
            layer_sizes,
            dropout_rate: self.network.dropout,
            learning_rate: self.network.learning_rate,
            seed,
            batch_size: (self.network.batch_size > 0).then_some(self.network.batch_size),
        }
    }

    pub fn dp_config(&self) -> DpConfig {
        DpConfig {
            clip_norm: self.dp.clip_norm,
            noise_scale: self.dp.noise_scale,
            lot_size: self.dp.lot_size,
            delta: self.dp.delta,
        }
    }

    pub fn privacy_mode(&self, kind: ModeKind) -> PrivacyMode {
        match kind {
            ModeKind::Plain => PrivacyMode::Plain,
            ModeKind::Dp => PrivacyMode::DifferentialPrivacy(self.dp_config()),
            ModeKind::Chaos => PrivacyMode::ChaoticCipher,
        }
    }

    pub fn federation_config(&self, kind: ModeKind, n_features: usize, seed: u64) -> FederationConfig {
        FederationConfig {
            n_participants: self.federation.participants,
            rounds_max: self.federation.rounds_max,
            local_epochs: self.federation.local_epochs,
            val_accuracy_threshold: self.federation.val_accuracy_threshold,
            mode: self.privacy_mode(kind),
            network: self.network_config(n_features, seed),
            seed,
        }
    }

    pub fn split_ratios(&self) -> SplitRatios {
        let [train, val, test] = self.partition.split;
        SplitRatios { train, val, test }
    }

    pub fn partition_spec(&self, seed: u64) -> PartitionSpec {
        let p = &self.partition;
        let mode = match p.kind {
            PartitionKind::Even => PartitionMode::Even,
            PartitionKind::Proportions => PartitionMode::Proportions {
                fractions: p.fractions.clone().unwrap_or_default(),
            },
            PartitionKind::ForcedSmall => PartitionMode::ForcedSmall {
                min_small: p.min_small.unwrap_or(2),
                small_cap: p.small_cap.unwrap_or(MAX_SMALL_CAP),
            },
        };
        PartitionSpec {
            mode,
            label_skew: p.label_skew.clone(),
            missing_feature: self.missing_feature.as_ref().map(|m| MissingFeatureSpec {
                participant: m.participant,
                feature: m.feature.clone(),
                donor: m.donor,
            }),
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> String {
        let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/breast_cancer.csv");
        format!("seeds = [1]\n[dataset]\npath = \"{data}\"\nlabel_column = \"diagnosis\"\n")
    }

    fn err(extra: &str) -> String {
        let cfg = RunConfig::from_toml(&format!("{}{extra}", base()), ".");
        match cfg.and_then(|c| c.validate()) {
            Ok(()) => panic!("accepted: {extra}"),
            Err(e) => e.to_string(),
        }
    }

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::from_toml(&base(), ".").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.modes, ModeKind::ALL.to_vec());
        assert_eq!(cfg.federation.rounds_max, 10);
        assert_eq!(cfg.network_config(30, 0).layer_sizes, vec![30, 64, 32, 16, 8, 1]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(err("[network]\ndropuot = 0.3\n").contains("dropuot"));
        assert!(err("colour = 1\n").contains("colour"));
    }

    #[test]
    fn diagnostics_name_the_field() {
        assert!(err("[federation]\nparticipants = 1\n").starts_with("configuration error: federation.participants"));
        assert!(err("[network]\ndropout = 1.0\n").contains("network.dropout"));
        assert!(err("[network]\nhidden = [4, 0, 2, 2]\n").contains("network.hidden[1]"));
        assert!(err("[partition]\nkind = \"proportions\"\n").contains("partition.fractions"));
        assert!(err("[partition]\nkind = \"proportions\"\nfractions = [0.5, 0.5]\n").contains("partition.fractions"));
        assert!(err("[partition]\nkind = \"forced_small\"\nsmall_cap = 0.2\n").contains("partition.small_cap"));
        assert!(err("[partition]\nsplit = [0.5, 0.5, 0.5]\n").contains("partition.split"));
        assert!(err("[dp]\ndelta = 2.0\n").contains("dp"));
        assert!(err("[chaos]\nr = 3.0\n").contains("chaos.r"));
        assert!(err("[missing_feature]\nparticipant = 9\nfeature = \"x\"\n").contains("missing_feature.participant"));
        assert!(
            err("[missing_feature]\nparticipant = 2\nfeature = \"x\"\ndonor = 2\n").contains("missing_feature.donor")
        );
    }

    #[test]
    fn missing_dataset_and_seeds() {
        let cfg = RunConfig::from_toml(
            "seeds = []\n[dataset]\npath = \"nope.csv\"\nlabel_column = \"y\"\n",
            ".",
        )
        .unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("seeds"));
        let cfg = RunConfig::from_toml(
            "seeds = [1]\n[dataset]\npath = \"nope.csv\"\nlabel_column = \"y\"\n",
            ".",
        )
        .unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("dataset.path"));
    }
}
