use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjuster::AdjustConfig;
use crate::aligner::Heuristic;
use crate::analysis::AnalysisConfig;
use crate::corpus::synthetic::LexiconSpec;
use crate::corpus::Reorder;
use crate::encoder::{EncoderConfig, MlmConfig};
use crate::error::{Error, Result};
use crate::finetuner::FinetuneConfig;

/// Where the bilingual and task data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    /// Synthetic source language plus a word-cipher target language.
    Cipher(CipherData),
    /// User-supplied files; every task file is optional.
    Files(FileData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CipherData {
    pub lexicon: LexiconSpec,
    pub reorder: Reorder,
    /// Sentence pairs used for alignment and adjustment.
    pub parallel_sentences: usize,
    /// Further pairs kept out of adjustment, used by the analyses.
    pub heldout_sentences: usize,
    pub classification_train: usize,
    pub classification_test: usize,
    pub tagging_train: usize,
    pub tagging_test: usize,
    pub seed: u64,
}

impl Default for CipherData {
    fn default() -> Self {
        CipherData {
            lexicon: LexiconSpec::default(),
            reorder: Reorder::RandomAdjacent { prob: 0.2 },
            parallel_sentences: 800,
            heldout_sentences: 200,
            classification_train: 2000,
            classification_test: 300,
            tagging_train: 0,
            tagging_test: 0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FileData {
    /// `source ||| target` lines.
    pub parallel: PathBuf,
    /// Trailing lines of `parallel` held out from adjustment.
    pub heldout_sentences: usize,
    /// Source-language training pairs (TSV premise, hypothesis, label).
    pub classification_train: Option<PathBuf>,
    /// Target-language test pairs.
    pub classification_test: Option<PathBuf>,
    pub tagging_train: Option<PathBuf>,
    pub tagging_test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub iterations: usize,
    pub heuristic: Heuristic,
    pub max_pairs: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            iterations: 5,
            heuristic: Heuristic::GrowDiagFinalAnd,
            max_pairs: 6000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub permutation_iterations: usize,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            permutation_iterations: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stages {
    pub generate: bool,
    pub align: bool,
    pub pretrain: bool,
    pub adjust: bool,
    pub finetune: bool,
    pub evaluate: bool,
    pub analyze: bool,
    pub xsr: bool,
    pub stats: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self::all(true)
    }
}

/// Stage names in execution order.
pub const STAGE_ORDER: [&str; 9] = [
    "generate", "align", "pretrain", "adjust", "finetune", "evaluate", "analyze", "xsr", "stats",
];

impl Stages {
    pub fn all(on: bool) -> Self {
        Self::from_flags([on; 9])
    }

    pub fn only(name: &str) -> Result<Self> {
        let i = STAGE_ORDER
            .iter()
            .position(|s| *s == name)
            .ok_or_else(|| Error::Config(format!("unknown stage `{name}`")))?;
        let mut flags = [false; 9];
        flags[i] = true;
        Ok(Self::from_flags(flags))
    }

    fn flags(&self) -> [bool; 9] {
        [
            self.generate,
            self.align,
            self.pretrain,
            self.adjust,
            self.finetune,
            self.evaluate,
            self.analyze,
            self.xsr,
            self.stats,
        ]
    }

    fn from_flags(f: [bool; 9]) -> Self {
        Stages {
            generate: f[0],
            align: f[1],
            pretrain: f[2],
            adjust: f[3],
            finetune: f[4],
            evaluate: f[5],
            analyze: f[6],
            xsr: f[7],
            stats: f[8],
        }
    }

    pub fn enabled(&self, name: &str) -> bool {
        STAGE_ORDER.iter().position(|s| *s == name).is_some_and(|i| self.flags()[i])
    }

    /// Index in [`STAGE_ORDER`] of the last enabled stage.
    pub fn last(&self) -> Option<usize> {
        STAGE_ORDER.iter().rposition(|s| self.enabled(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub vocab_size: usize,
    pub encoder: EncoderConfig,
    pub pretrain: MlmConfig,
    pub align: AlignConfig,
    pub adjust: AdjustConfig,
    pub finetune: FinetuneConfig,
    pub analysis: AnalysisConfig,
    pub stats: StatsConfig,
    pub seeds: Vec<u64>,
    pub stages: Stages,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::Cipher(CipherData::default()),
            vocab_size: 160,
            encoder: EncoderConfig {
                layers: 2,
                model_dim: 32,
                heads: 4,
                ffn_dim: 64,
                max_positions: 64,
                vocab_size: 160,
                dropout: 0.0,
            },
            pretrain: MlmConfig {
                steps: 400,
                batch_size: 16,
                mask_prob: 0.15,
                lr: 2e-3,
                seed: 0,
            },
            align: AlignConfig::default(),
            adjust: AdjustConfig {
                lr: 1e-3,
                epochs: 5,
                ..AdjustConfig::default()
            },
            finetune: FinetuneConfig {
                lr: 1e-3,
                epochs: 5,
                ..FinetuneConfig::default()
            },
            analysis: AnalysisConfig {
                n_related: 1000,
                n_unrelated: 1000,
                bins: 30,
                ..AnalysisConfig::default()
            },
            stats: StatsConfig::default(),
            seeds: (0..5).collect(),
            stages: Stages::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seed list has duplicates".into()));
        }
        self.encoder.validate()?;
        if self.encoder.vocab_size < self.vocab_size {
            return Err(Error::Config(format!(
                "encoder vocab_size {} is smaller than the subword vocabulary size {}",
                self.encoder.vocab_size, self.vocab_size
            )));
        }
        self.adjust.validate()?;
        self.finetune.validate()?;
        match &self.data {
            DataConfig::Cipher(c) => {
                if c.parallel_sentences == 0 {
                    return Err(Error::Config("parallel_sentences must be ≥ 1".into()));
                }
            }
            DataConfig::Files(f) => {
                let paths = std::iter::once(&f.parallel).chain(
                    [&f.classification_train, &f.classification_test, &f.tagging_train, &f.tagging_test]
                        .into_iter()
                        .flatten(),
                );
                for p in paths {
                    if !p.exists() {
                        return Err(Error::Config(format!("data file {} does not exist", p.display())));
                    }
                }
            }
        }
        Ok(())
    }
}
