use std::path::Path;

use serde::{Deserialize, Serialize};
use twopass_core::data::CorpusSpec;
use twopass_core::first_pass::BeamConfig;
use twopass_core::model::ModelConfig;
use twopass_core::second_pass::RescoreConfig;
use twopass_core::training::{MwerConfig, TrainConfig};

use crate::error::{at_path, CliError, CliResult};

pub const SEED_ENV: &str = "TWOPASS_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { epochs: 10, learning_rate: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub adaptive_threshold: Option<f64>,
    pub max_symbols_per_frame: usize,
    pub bias_weight: f64,
    pub rescore_k: usize,
    pub las_beam_size: usize,
    pub coverage_weight: f64,
    pub coverage_clip: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        let (b, r) = (BeamConfig::default(), RescoreConfig::default());
        DecodeConfig {
            beam_size: b.beam_size,
            adaptive_threshold: b.adaptive_threshold,
            max_symbols_per_frame: b.max_symbols_per_frame,
            bias_weight: b.bias_weight,
            rescore_k: r.rescore_k,
            las_beam_size: r.las_beam_size,
            coverage_weight: r.coverage_weight,
            coverage_clip: r.coverage_clip,
        }
    }
}

impl DecodeConfig {
    pub fn beam(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam_size,
            adaptive_threshold: self.adaptive_threshold,
            max_symbols_per_frame: self.max_symbols_per_frame,
            biasing: None,
            bias_weight: self.bias_weight,
        }
    }

    pub fn rescore(&self) -> RescoreConfig {
        RescoreConfig {
            rescore_k: self.rescore_k,
            las_beam_size: self.las_beam_size,
            coverage_weight: self.coverage_weight,
            coverage_clip: self.coverage_clip,
            ..RescoreConfig::default()
        }
    }
}

/// Everything a command may need; one JSON document overrides any subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the corpus generator, weight init and shuffling.
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stage1: Schedule,
    pub stage2: Schedule,
    pub stage3: Schedule,
    pub mwer_schedule: Schedule,
    pub mwer: MwerConfig,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            corpus: CorpusSpec::default(),
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            stage1: Schedule { epochs: 40, learning_rate: 0.15 },
            stage2: Schedule { epochs: 10, learning_rate: 0.3 },
            stage3: Schedule { epochs: 40, learning_rate: 0.1 },
            mwer_schedule: Schedule { epochs: 5, learning_rate: 0.05 },
            mwer: MwerConfig::default(),
            // Shallow-fusion weight for contact biasing, per matched piece.
            decode: DecodeConfig { bias_weight: 2.0, ..DecodeConfig::default() },
        }
    }
}

impl RunConfig {
    /// Defaults, then the JSON file, then the seed environment variable,
    /// then the seed flag.
    pub fn resolve(path: Option<&Path>, seed_flag: Option<u64>) -> CliResult<RunConfig> {
        let env = std::env::var(SEED_ENV).ok();
        Self::resolve_with(path, env.as_deref(), seed_flag)
    }

    pub fn resolve_with(path: Option<&Path>, env_seed: Option<&str>, seed_flag: Option<u64>) -> CliResult<RunConfig> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = at_path(p, std::fs::read_to_string(p))?;
                serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
            }
        };
        if let Some(s) = env_seed {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("{SEED_ENV}={s} is not an unsigned integer")))?;
        }
        if let Some(s) = seed_flag {
            cfg.seed = s;
        }
        cfg.corpus.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.mwer.validate()?;
        self.decode.beam().validate()?;
        self.decode.rescore().validate()?;
        if self.model.feature_dim != self.corpus.feature_dim {
            return Err(CliError::usage(format!(
                "model feature_dim {} differs from corpus feature_dim {}",
                self.model.feature_dim, self.corpus.feature_dim
            )));
        }
        if self.model.vocab_size != self.corpus.vocab_size {
            return Err(CliError::usage(format!(
                "model vocab_size {} differs from corpus vocab_size {}",
                self.model.vocab_size, self.corpus.vocab_size
            )));
        }
        Ok(())
    }

    pub fn schedule(&self, stage: u8) -> Schedule {
        match stage {
            1 => self.stage1,
            2 => self.stage2,
            _ => self.stage3,
        }
    }
}
