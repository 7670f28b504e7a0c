//! Experiment configuration: a TOML file with `[experiment]`, `[pretrain]`
//! and `[finetune]` sections, overridable from the command line.
//!
//! Every default is the preset value, so an empty file plus
//! `--arch`/`--fusion` reproduces a preset.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use adbn_core::dbn::Architecture;
use adbn_core::rbm::GibbsMode;
use adbn_core::{CdConfig, Error, FinetuneConfig, FusionMode, Result};
use serde::Deserialize;

pub const DEFAULT_REPETITIONS: usize = 6;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    experiment: ExperimentSection,
    #[serde(default)]
    pretrain: PretrainSection,
    #[serde(default)]
    finetune: FinetuneSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    manifest: Option<PathBuf>,
    arch: Option<String>,
    fusion: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    repetitions: Option<usize>,
    strict: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PretrainSection {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    cd_k: Option<usize>,
    momentum: Option<f64>,
    hidden: Option<Vec<usize>>,
    learning_rates: Option<Vec<f64>>,
    gibbs: Option<GibbsMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FinetuneSection {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    head_lr: Option<f64>,
    unfrozen_dbn_lr: Option<f64>,
    frozen_layers: Option<Vec<usize>>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub arch: Option<Architecture>,
    pub fusion: Option<FusionMode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub repetitions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub hidden: usize,
    pub cd: CdConfig,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    pub arch: Architecture,
    pub fusion: FusionMode,
    pub seed: u64,
    pub out: PathBuf,
    pub repetitions: usize,
    /// Only the preset layer widths and head shapes are accepted.
    pub strict: bool,
    pub layers: Vec<LayerSpec>,
    pub finetune: FinetuneConfig,
}

impl ExperimentConfig {
    /// Preset configuration for `arch`/`fusion` with every default.
    pub fn preset(arch: Architecture, fusion: FusionMode) -> Self {
        resolve(ConfigFile::default(), Path::new("."), &Overrides {
            arch: Some(arch),
            fusion: Some(fusion),
            ..Overrides::default()
        })
        .expect("presets are valid")
    }

    pub fn from_toml(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| Error::config(format!("config: {}", e.message())))?;
        resolve(file, base, overrides)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, overrides).map_err(|e| e.context(path.display()))
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden).collect()
    }

    pub fn cd_configs(&self) -> Vec<CdConfig> {
        self.layers.iter().map(|l| l.cd).collect()
    }

    /// Seed of repetition `i`.
    pub fn repetition_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    pub fn model_name(&self) -> String {
        self.arch.model_name(self.fusion)
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::config("no manifest given (set experiment.manifest or --manifest)"))
    }
}

fn resolve(file: ConfigFile, base: &Path, ov: &Overrides) -> Result<ExperimentConfig> {
    let exp = file.experiment;
    let arch = match (ov.arch, exp.arch) {
        (Some(a), _) => a,
        (None, Some(s)) => s.parse()?,
        (None, None) => Architecture::Alpha,
    };
    let fusion = match (ov.fusion, exp.fusion) {
        (Some(f), _) => f,
        (None, Some(s)) => s.parse()?,
        (None, None) => FusionMode::Aggregative,
    };
    let relative = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let manifest = ov.manifest.clone().or(exp.manifest.map(relative));
    let out = ov
        .out
        .clone()
        .or(exp.out.map(relative))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let repetitions = ov.repetitions.or(exp.repetitions).unwrap_or(DEFAULT_REPETITIONS);
    if repetitions == 0 {
        return Err(Error::config("repetitions must be at least 1"));
    }
    let strict = exp.strict.unwrap_or(false);

    let layers = resolve_layers(arch, &file.pretrain, strict)?;

    let ft = file.finetune;
    let defaults = FinetuneConfig::default();
    let finetune = FinetuneConfig {
        head_lr: ft.head_lr.unwrap_or(defaults.head_lr),
        unfrozen_dbn_lr: ft.unfrozen_dbn_lr.unwrap_or(defaults.unfrozen_dbn_lr),
        frozen_layers: ft
            .frozen_layers
            .map(BTreeSet::from_iter)
            .unwrap_or(defaults.frozen_layers),
        epochs: ft.epochs.unwrap_or(defaults.epochs),
        batch_size: ft.batch_size.unwrap_or(defaults.batch_size),
    };
    finetune.validate()?;
    if let Some(&l) = finetune.frozen_layers.iter().find(|&&l| l >= layers.len()) {
        return Err(Error::config(format!(
            "frozen layer {l} does not exist in a {}-layer stack",
            layers.len()
        )));
    }

    Ok(ExperimentConfig {
        manifest,
        arch,
        fusion,
        seed: ov.seed.or(exp.seed).unwrap_or(DEFAULT_SEED),
        out,
        repetitions,
        strict,
        layers,
        finetune,
    })
}

fn resolve_layers(arch: Architecture, pre: &PretrainSection, strict: bool) -> Result<Vec<LayerSpec>> {
    let preset = arch.preset();
    if strict && (pre.hidden.is_some() || pre.learning_rates.is_some()) {
        return Err(Error::config(
            "strict mode uses the preset layer widths and learning rates; remove pretrain.hidden/learning_rates",
        ));
    }
    let hidden = pre
        .hidden
        .clone()
        .unwrap_or_else(|| preset.iter().map(|p| p.hidden).collect());
    if hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::config("pretrain.hidden must list positive widths"));
    }
    // Deeper-than-preset layers reuse the last preset rate.
    let preset_lr = |l: usize| preset[l.min(preset.len() - 1)].learning_rate;
    let rates: Vec<f64> = match &pre.learning_rates {
        None => (0..hidden.len()).map(preset_lr).collect(),
        Some(r) if r.len() == 1 => vec![r[0]; hidden.len()],
        Some(r) if r.len() == hidden.len() => r.clone(),
        Some(r) => {
            return Err(Error::config(format!(
                "{} learning rates for {} layers",
                r.len(),
                hidden.len()
            )))
        }
    };
    let defaults = CdConfig::default();
    let layers = hidden
        .iter()
        .zip(rates)
        .enumerate()
        .map(|(l, (&h, lr))| LayerSpec {
            hidden: h,
            cd: CdConfig {
                k: pre.cd_k.unwrap_or(defaults.k),
                learning_rate: lr,
                momentum: pre
                    .momentum
                    .unwrap_or(preset[l.min(preset.len() - 1)].momentum),
                batch_size: pre.batch_size.unwrap_or(defaults.batch_size),
                epochs: pre.epochs.unwrap_or(defaults.epochs),
                gibbs: pre.gibbs.unwrap_or_default(),
            },
        })
        .collect::<Vec<_>>();
    for (l, spec) in layers.iter().enumerate() {
        spec.cd.validate().map_err(|e| e.context(format!("pretrain layer {l}")))?;
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(text, Path::new("/base"), &Overrides::default())
    }

    #[test]
    fn empty_file_is_the_alpha_preset() {
        let c = parse("").unwrap();
        assert_eq!(c.arch, Architecture::Alpha);
        assert_eq!(c.fusion, FusionMode::Aggregative);
        assert_eq!(c.hidden_sizes(), [2000, 2000]);
        let rates: Vec<f64> = c.layers.iter().map(|l| l.cd.learning_rate).collect();
        assert_eq!(rates, [1e-3, 5e-4]);
        assert!(c.layers.iter().all(|l| l.cd.momentum == 0.5 && l.cd.batch_size == 128 && l.cd.epochs == 3));
        assert_eq!(c.finetune, FinetuneConfig::default());
        assert_eq!(c.repetitions, 6);
    }

    #[test]
    fn presets_for_every_architecture() {
        let iota = ExperimentConfig::preset(Architecture::Iota, FusionMode::Gradient);
        assert_eq!(iota.hidden_sizes(), [4000, 4000]);
        assert!(iota.layers.iter().all(|l| l.cd.learning_rate == 5e-4));
        let beta = ExperimentConfig::preset(Architecture::Beta, FusionMode::Standard);
        assert_eq!(beta.hidden_sizes(), [2000; 3]);
        let rbm = ExperimentConfig::preset(Architecture::Rbm, FusionMode::Aggregative);
        assert_eq!(rbm.hidden_sizes(), [2000]);
        assert_eq!(rbm.model_name(), "A-RBM");
    }

    #[test]
    fn sections_and_relative_paths() {
        let c = parse(
            r#"
            [experiment]
            manifest = "data/manifest.tsv"
            arch = "zeta"
            fusion = "gradient"
            seed = 7
            out = "/abs/runs"
            repetitions = 2

            [pretrain]
            hidden = [64, 32]
            learning_rates = [0.01]
            epochs = 1

            [finetune]
            head_lr = 0.002
            frozen_layers = []
            "#,
        )
        .unwrap();
        assert_eq!(c.manifest.as_deref(), Some(Path::new("/base/data/manifest.tsv")));
        assert_eq!(c.out, Path::new("/abs/runs"));
        assert_eq!((c.arch, c.fusion, c.seed, c.repetitions), (Architecture::Zeta, FusionMode::Gradient, 7, 2));
        assert_eq!(c.hidden_sizes(), [64, 32]);
        assert!(c.layers.iter().all(|l| l.cd.learning_rate == 0.01 && l.cd.epochs == 1));
        assert_eq!(c.finetune.head_lr, 0.002);
        assert!(c.finetune.frozen_layers.is_empty());
        assert_eq!(c.repetition_seed(1), 8);
    }

    #[test]
    fn overrides_win() {
        let ov = Overrides {
            arch: Some(Architecture::Beta),
            seed: Some(99),
            ..Overrides::default()
        };
        let c = ExperimentConfig::from_toml("[experiment]\narch = \"iota\"\nseed = 1\n", Path::new("."), &ov).unwrap();
        assert_eq!((c.arch, c.seed), (Architecture::Beta, 99));
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in [
            "[experiment]\narch = \"omega\"",
            "[experiment]\nfusion = \"median\"",
            "[experiment]\nrepetitions = 0",
            "[pretrain]\nhidden = [10, 0]",
            "[pretrain]\nhidden = [10, 5, 3]\nlearning_rates = [0.1, 0.2]",
            "[pretrain]\nmomentum = 1.5",
            "[finetune]\nhead_lr = -1.0",
            "[finetune]\nfrozen_layers = [5]",
            "[experiment]\nstrict = true\n[pretrain]\nhidden = [10]",
            "[unknown]\nx = 1",
            "[pretrain]\nepoch = 3",
        ] {
            assert!(matches!(parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
