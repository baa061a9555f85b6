//! Config files and the per-field flag overrides layered on top of them.

use std::collections::BTreeMap;
use std::path::Path;

use clap::Args;
use serde::de::DeserializeOwned;

use poe_supcon::dataset::{Language, Modality, SynthConfig};
use poe_supcon::evaluation::Aggregation;
use poe_supcon::losses::SupConVariant;
use poe_supcon::training::{ExperimentConfig, Fusion, StratifyBy};
use poe_supcon::Error;

/// Parses a bare word through the type's serde representation, so flags
/// accept exactly the spellings config files do.
fn serde_word<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_dim(s: &str) -> Result<(Modality, usize), String> {
    let (m, d) = s.split_once('=').ok_or_else(|| format!("expected MODALITY=DIM, got {s:?}"))?;
    let m: Modality = m.parse().map_err(|e: Error| e.to_string())?;
    let d = d.parse().map_err(|_| format!("bad dimension {d:?}"))?;
    Ok((m, d))
}

/// Reads a JSON or TOML (by `.toml` extension) config; absent path means
/// all defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Error> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let format_err = |detail: String| Error::Format { path: path.to_path_buf(), detail };
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| format_err(e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| format_err(e.to_string()))
    }
}

macro_rules! overrides {
    ($name:ident => $target:ty { $($field:ident : $ty:ty $(=> $parser:expr)? , $help:literal;)* }) => {
        #[derive(Debug, Clone, Default, Args)]
        pub struct $name {
            $(
                #[arg(long = stringify!($field), help = $help $(, value_parser = $parser)?)]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            pub fn apply(&self, cfg: &mut $target) {
                $(
                    if let Some(v) = &self.$field {
                        cfg.$field = v.clone();
                    }
                )*
            }
        }
    };
}

// Boolean flags take an optional value: `--use_cl` alone means true.
macro_rules! bool_flags {
    ($name:ident => $target:ty { $($field:ident, $help:literal;)* }) => {
        #[derive(Debug, Clone, Default, Args)]
        pub struct $name {
            $(
                #[arg(long = stringify!($field), help = $help, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
                pub $field: Option<bool>,
            )*
        }

        impl $name {
            pub fn apply(&self, cfg: &mut $target) {
                $(
                    if let Some(v) = self.$field {
                        cfg.$field = v;
                    }
                )*
            }
        }
    };
}

overrides!(ExperimentValues => ExperimentConfig {
    k_folds: usize, "Number of cross-validation folds [default: 10]";
    lr: f64, "Adam learning rate [default: 1e-5]";
    batch_size: usize, "Mini-batch size [default: 16]";
    epochs: usize, "Training epochs per fold [default: 10]";
    l2: f64, "L2 weight-decay coefficient [default: 0.01]";
    lambda: f64, "Weight of the contrastive term [default: 1.0]";
    tau: f64, "Contrastive temperature [default: 0.07]";
    fusion: Fusion => serde_word::<Fusion>, "concat | poe [default: concat]";
    modalities: ModalityList => parse_modalities, "Comma-separated modalities [default: speech,acoustic,text,image]";
    supcon_variant: SupConVariant => serde_word::<SupConVariant>, "standard_sup_con | paper_literal [default: standard_sup_con]";
    stratify_by: StratifyBy => serde_word::<StratifyBy>, "label | label_and_language [default: label]";
    hidden: usize, "Hidden width of every FFN head [default: 256]";
    projection_dim: usize, "Width of the contrastive projection [default: 128]";
    aggregation: Aggregation => serde_word::<Aggregation>, "Fold aggregation: mean | pooled [default: mean]";
    seed: u64, "Seed for folds, initialization and shuffling [default: 0]";
});

bool_flags!(ExperimentFlags => ExperimentConfig {
    use_cl, "Add the supervised contrastive term [default: false]";
    use_image, "Include the image modality [default: false]";
    include_joint_expert, "Add the concatenation head as an extra PoE expert [default: false]";
    aux_modality_ce, "Add mean per-expert cross-entropy under PoE [default: false]";
    group_by_participant, "Keep each participant's samples in one fold [default: false]";
    decoupled_l2, "Decoupled weight decay instead of L2 in the gradient [default: false]";
});

/// Alias so clap takes the whole comma-separated list as one value.
type ModalityList = Vec<Modality>;

fn parse_modalities(s: &str) -> Result<ModalityList, String> {
    s.split(',').map(|m| m.parse::<Modality>().map_err(|e| e.to_string())).collect()
}

#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentOverrides {
    #[command(flatten)]
    pub values: ExperimentValues,
    #[command(flatten)]
    pub flags: ExperimentFlags,
}

impl ExperimentOverrides {
    pub fn resolve(&self, path: Option<&Path>) -> Result<ExperimentConfig, Error> {
        let mut cfg: ExperimentConfig = load_config(path)?;
        self.values.apply(&mut cfg);
        self.flags.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

overrides!(SynthOverrides => SynthConfig {
    n_participants: usize, "Participants, three samples each [default: 129]";
    en_participants: usize, "English-speaking participants [default: 62]";
    mci_participants: usize, "Participants labelled MCI [default: 74]";
    en_mci_participants: usize, "English-speaking MCI participants [default: 41]";
    mci_male_participants: usize, "Male MCI participants [default: 29]";
    nc_male_participants: usize, "Male NC participants [default: 21]";
    picture_signal_strength: f64, "Scale of the per-picture centroids [default: 1.0]";
    label_signal_strength: f64, "Scale of the label direction [default: 0.5]";
    spurious_subgroup_bias: f64, "Label-correlated shift in one language, in [0, 1] [default: 0]";
    spurious_language: Language => serde_word::<Language>, "Language carrying the spurious shift: En | Zh [default: Zh]";
    spurious_modalities: ModalityList => parse_modalities, "Modalities carrying the spurious shift [default: speech,acoustic]";
    subgroup_shift_norm: f64, "Length of the spurious shift vector [default: 3.0]";
    noise_std: f64, "Gaussian noise standard deviation, > 0 [default: 1.0]";
    seed: u64, "Generator seed [default: 0]";
});

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub values: SynthOverrides,
    /// Per-modality width, e.g. `--dim text=64` (repeatable)
    #[arg(long = "dim", value_parser = parse_dim, value_name = "MODALITY=DIM")]
    pub dims: Vec<(Modality, usize)>,
}

impl SynthArgs {
    pub fn resolve(&self, path: Option<&Path>) -> Result<SynthConfig, Error> {
        let mut cfg: SynthConfig = load_config(path)?;
        self.values.apply(&mut cfg);
        if !self.dims.is_empty() {
            let dims: BTreeMap<Modality, usize> = self.dims.iter().copied().collect();
            cfg.dims.extend(dims);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
