//! Model and training configuration, including the line-oriented config
//! file format:
//!
//! ```text
//! # comment
//! d = 32
//! selection_mode = learned
//! ```
//!
//! Unknown keys and malformed values are errors.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Grid of starting-entity counts searched during tuning.
pub const GRID_NUM_STARTS: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];
/// Grid of starting-entity type counts searched during tuning.
pub const GRID_NUM_TYPES: [usize; 5] = [2, 3, 5, 7, 9];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SelectionMode {
    Learned,
    Random,
    Degree,
}

impl FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "learned" => Ok(Self::Learned),
            "random" => Ok(Self::Random),
            "degree" => Ok(Self::Degree),
            other => Err(format!("unknown selection mode `{other}`")),
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Learned => "learned",
            Self::Random => "random",
            Self::Degree => "degree",
        })
    }
}

/// Component switches for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ablations {
    pub selection: bool,
    pub highway: bool,
    pub link_verify: bool,
    pub selection_mode: SelectionMode,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            selection: true,
            highway: true,
            link_verify: true,
            selection_mode: SelectionMode::Learned,
        }
    }
}

impl Ablations {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn without_selection() -> Self {
        Self {
            selection: false,
            ..Self::default()
        }
    }

    pub fn without_highway() -> Self {
        Self {
            highway: false,
            ..Self::default()
        }
    }

    pub fn without_link_verify() -> Self {
        Self {
            link_verify: false,
            ..Self::default()
        }
    }

    pub fn with_mode(mode: SelectionMode) -> Self {
        Self {
            selection_mode: mode,
            ..Self::default()
        }
    }

    /// Short run label, e.g. `full`, `no-selection`, `random`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if !self.selection {
            parts.push("no-selection".to_string());
        }
        if !self.highway {
            parts.push("no-highway".to_string());
        }
        if !self.link_verify {
            parts.push("no-linkverify".to_string());
        }
        if self.selection && self.selection_mode != SelectionMode::Learned {
            parts.push(self.selection_mode.to_string());
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Entity and relation embedding width `d`.
    pub dim: usize,
    /// Attention width `d_γ`.
    pub attn_dim: usize,
    /// Pre-embedding (full propagation) layers `L1`.
    pub pre_layers: usize,
    /// Progressive propagation layers `L2`.
    pub layers: usize,
    /// Starting entities kept by selection, `n`.
    pub num_starts: usize,
    /// Starting-entity types, `m`.
    pub num_types: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// One relation encoder for the pre-embedding and progressive stages.
    pub share_relations: bool,
    /// Adds an identity edge per visited entity in the progressive stage.
    pub self_loop: bool,
    /// Hides a training query's own fact (and inverse) from its forward pass.
    pub mask_query_edge: bool,
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            attn_dim: 8,
            pre_layers: 2,
            layers: 3,
            num_starts: 8,
            num_types: 3,
            lr: 5e-3,
            batch_size: 32,
            patience: 10,
            max_epochs: 200,
            seed: 0,
            share_relations: true,
            self_loop: true,
            mask_query_edge: true,
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks = [
            (self.num_starts >= 1, "n must be >= 1"),
            (self.num_types >= 1, "m must be >= 1"),
            (self.layers >= 1, "l2 must be >= 1"),
            (self.dim >= 1, "d must be >= 1"),
            (self.attn_dim >= 1, "d_gamma must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lr > 0.0 && self.lr.is_finite(), "lr must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(ConfigError::Invalid(msg.to_string()));
            }
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: line_no })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value).map_err(|e| match e {
                SetError::Unknown => ConfigError::UnknownKey {
                    line: line_no,
                    key: key.to_string(),
                },
                SetError::Value => ConfigError::BadValue {
                    line: line_no,
                    key: key.to_string(),
                    value: value.to_string(),
                },
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), SetError> {
        fn p<T: FromStr>(v: &str) -> Result<T, SetError> {
            v.parse().map_err(|_| SetError::Value)
        }
        match key {
            "d" => self.dim = p(value)?,
            "d_gamma" => self.attn_dim = p(value)?,
            "l1" => self.pre_layers = p(value)?,
            "l2" => self.layers = p(value)?,
            "n" => self.num_starts = p(value)?,
            "m" => self.num_types = p(value)?,
            "lr" => self.lr = p(value)?,
            "batch_size" => self.batch_size = p(value)?,
            "patience" => self.patience = p(value)?,
            "max_epochs" => self.max_epochs = p(value)?,
            "seed" => self.seed = p(value)?,
            "share_relations" => self.share_relations = p(value)?,
            "self_loop" => self.self_loop = p(value)?,
            "mask_query_edge" => self.mask_query_edge = p(value)?,
            "selection" => self.ablations.selection = p(value)?,
            "highway" => self.ablations.highway = p(value)?,
            "linkverify" => self.ablations.link_verify = p(value)?,
            "selection_mode" => self.ablations.selection_mode = p(value)?,
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    /// Renders the config in the file format accepted by [`parse`](Self::parse).
    pub fn to_file_string(&self) -> String {
        format!(
            "d = {}\nd_gamma = {}\nl1 = {}\nl2 = {}\nn = {}\nm = {}\nlr = {}\nbatch_size = {}\n\
             patience = {}\nmax_epochs = {}\nseed = {}\nshare_relations = {}\nself_loop = {}\n\
             mask_query_edge = {}\nselection = {}\nhighway = {}\nlinkverify = {}\nselection_mode = {}\n",
            self.dim,
            self.attn_dim,
            self.pre_layers,
            self.layers,
            self.num_starts,
            self.num_types,
            self.lr,
            self.batch_size,
            self.patience,
            self.max_epochs,
            self.seed,
            self.share_relations,
            self.self_loop,
            self.mask_query_edge,
            self.ablations.selection,
            self.ablations.highway,
            self.ablations.link_verify,
            self.ablations.selection_mode,
        )
    }
}

enum SetError {
    Unknown,
    Value,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ModelConfig::parse(
            "# tuned\nd = 16\n n=4 # inline\nselection_mode = degree\n\nlinkverify = false\n",
        )
        .unwrap();
        assert_eq!(cfg.dim, 16);
        assert_eq!(cfg.num_starts, 4);
        assert_eq!(cfg.layers, 3);
        assert_eq!(cfg.ablations.selection_mode, SelectionMode::Degree);
        assert!(!cfg.ablations.link_verify);
    }

    #[test]
    fn errors() {
        assert_eq!(
            ModelConfig::parse("foo = 1"),
            Err(ConfigError::UnknownKey {
                line: 1,
                key: "foo".into()
            })
        );
        assert!(matches!(
            ModelConfig::parse("d 3"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            ModelConfig::parse("\nd = x"),
            Err(ConfigError::BadValue { line: 2, .. })
        ));
        assert!(matches!(
            ModelConfig::parse("n = 0"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn file_string_round_trips() {
        let cfg = ModelConfig {
            lr: 0.0125,
            ablations: Ablations::with_mode(SelectionMode::Random),
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::parse(&cfg.to_file_string()).unwrap(), cfg);
    }

    #[test]
    fn labels() {
        assert_eq!(Ablations::full().label(), "full");
        assert_eq!(Ablations::without_highway().label(), "no-highway");
        assert_eq!(
            Ablations::with_mode(SelectionMode::Degree).label(),
            "degree"
        );
    }
}
