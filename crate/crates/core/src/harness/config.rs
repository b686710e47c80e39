//! INI configuration for every experiment knob. Omitted keys take
//! defaults; seeds not given explicitly derive from `[experiment] seed`.
//! [`ExperimentConfig::to_ini`] writes the fully resolved configuration.

use std::fmt::Display;
use std::str::FromStr;

use ini::{Ini, Properties};
use sha2::{Digest, Sha256};

use super::corpus::GenreProfile;
use super::data::hex;
use super::experiment::{derive_seed, parse_approaches, Approach, ComparisonSettings};
use super::HarnessError;
use crate::baselines::DistillConfig;
use crate::expansion::{ActionDistribution, ExpandedLayer, SearchConfig};
use crate::vae::{Dims, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub folds: usize,
    pub source_songs: usize,
    pub source_test_songs: usize,
    pub target_songs: usize,
    pub approaches: Vec<Approach>,
    pub dims: Dims,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub distill: DistillConfig,
    pub search: SearchConfig,
    pub source: GenreProfile,
    pub source_test: GenreProfile,
    pub target: GenreProfile,
    pub sample_count: usize,
    pub sample_temperature: f64,
}

/// Adaptation learning rate relative to pretraining. Aggressive on purpose:
/// head-only updates stay stable at this rate, whole-network ones do not.
pub const FINETUNE_LR_FACTOR: f64 = 5.0;

pub fn default_pretrain() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 32,
        max_epochs: 150,
        early_stop_patience: 20,
        ..TrainConfig::default()
    }
}

pub fn default_finetune(pretrain: &TrainConfig) -> TrainConfig {
    TrainConfig {
        learning_rate: pretrain.learning_rate * FINETUNE_LR_FACTOR,
        batch_size: 32,
        max_epochs: 60,
        early_stop_patience: 15,
        ..pretrain.clone()
    }
}

impl ExperimentConfig {
    /// Defaults with every seed derived from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Self::from_ini_str("", Some(seed)).expect("defaults are valid")
    }

    /// Parses `text`; `seed_override` replaces `[experiment] seed`.
    pub fn from_ini_str(text: &str, seed_override: Option<u64>) -> Result<Self, HarnessError> {
        let ini = Ini::load_from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let empty = Properties::new();
        let sec = |name: &str| ini.section(Some(name)).unwrap_or(&empty);
        for (name, _) in ini.iter() {
            match name {
                None | Some("experiment" | "model" | "pretrain" | "finetune" | "distill" | "search" | "source_profile" | "source_test_profile" | "target_profile" | "sample") => {}
                Some(other) => return Err(HarnessError::Config(format!("unknown section [{other}]"))),
            }
        }
        if ini.general_section().iter().next().is_some() {
            return Err(HarnessError::Config("keys must live inside a section".into()));
        }

        let ex = sec("experiment");
        check_keys("experiment", ex, &["seed", "folds", "source_songs", "source_test_songs", "target_songs", "approaches"])?;
        let seed = match seed_override {
            Some(s) => s,
            None => get(ex, "experiment", "seed")?.unwrap_or(0),
        };
        let approaches = match ex.get("approaches") {
            Some(list) => parse_approaches(list).map_err(HarnessError::Config)?,
            None => Approach::headline(),
        };

        let m = sec("model");
        check_keys("model", m, &["hidden", "latent"])?;
        let defaults = Dims::default();
        let dims = Dims::new(get(m, "model", "hidden")?.unwrap_or(defaults.hidden), get(m, "model", "latent")?.unwrap_or(defaults.latent));
        dims.validate()?;

        let pretrain = train_section(sec("pretrain"), "pretrain", default_pretrain(), derive_seed(seed, "pretrain"))?;
        let ft_defaults = default_finetune(&pretrain);
        let finetune = train_section(sec("finetune"), "finetune", ft_defaults, derive_seed(seed, "finetune"))?;

        let d = sec("distill");
        check_keys("distill", d, &["weight", "temperature"])?;
        let dd = DistillConfig::default();
        let distill = DistillConfig {
            weight: get(d, "distill", "weight")?.unwrap_or(dd.weight),
            temperature: get(d, "distill", "temperature")?.unwrap_or(dd.temperature),
        };

        let search = search_section(sec("search"), derive_seed(seed, "search"))?;
        let source = profile_section(sec("source_profile"), "source_profile", "source-pop", derive_seed(seed, "source"))?;
        let mut st_default = source.clone();
        st_default.name = format!("{}-heldout", source.name);
        let source_test = profile_section_from(sec("source_test_profile"), "source_test_profile", st_default, derive_seed(seed, "source-test"))?;
        let target = profile_section(sec("target_profile"), "target_profile", "target-folk", derive_seed(seed, "target"))?;

        let s = sec("sample");
        check_keys("sample", s, &["count", "temperature"])?;

        let cfg = ExperimentConfig {
            seed,
            folds: get(ex, "experiment", "folds")?.unwrap_or(5),
            source_songs: get(ex, "experiment", "source_songs")?.unwrap_or(500),
            source_test_songs: get(ex, "experiment", "source_test_songs")?.unwrap_or(100),
            target_songs: get(ex, "experiment", "target_songs")?.unwrap_or(100),
            approaches,
            dims,
            pretrain,
            finetune,
            distill,
            search,
            source,
            source_test,
            target,
            sample_count: get(s, "sample", "count")?.unwrap_or(4),
            sample_temperature: get(s, "sample", "temperature")?.unwrap_or(1.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, seed_override: Option<u64>) -> Result<Self, HarnessError> {
        Self::from_ini_str(&std::fs::read_to_string(path)?, seed_override)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.search.validate()?;
        self.source.validate()?;
        self.source_test.validate()?;
        self.target.validate()?;
        if self.folds < 2 {
            return Err(HarnessError::Config("folds must be at least 2".into()));
        }
        if !(self.distill.weight >= 0.0) || !(self.distill.temperature > 0.0) {
            return Err(HarnessError::Config(format!("distill {:?}", self.distill)));
        }
        if !(self.sample_temperature > 0.0) {
            return Err(HarnessError::Config("sample temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn to_ini(&self) -> String {
        let mut ini = Ini::new();
        ini.with_section(Some("experiment"))
            .set("seed", self.seed.to_string())
            .set("folds", self.folds.to_string())
            .set("source_songs", self.source_songs.to_string())
            .set("source_test_songs", self.source_test_songs.to_string())
            .set("target_songs", self.target_songs.to_string())
            .set("approaches", self.approaches.iter().map(|a| a.name()).collect::<Vec<_>>().join(", "));
        ini.with_section(Some("model")).set("hidden", self.dims.hidden.to_string()).set("latent", self.dims.latent.to_string());
        write_train(&mut ini, "pretrain", &self.pretrain);
        write_train(&mut ini, "finetune", &self.finetune);
        ini.with_section(Some("distill"))
            .set("weight", self.distill.weight.to_string())
            .set("temperature", self.distill.temperature.to_string());
        let s = &self.search;
        ini.with_section(Some("search"))
            .set("iterations", s.iterations.to_string())
            .set("rollouts_per_iteration", s.rollouts_per_iteration.to_string())
            .set("rollout_depth", s.rollout_depth.to_string())
            .set("epsilon", s.epsilon.to_string())
            .set("ucb_exploration", s.ucb_exploration.to_string())
            .set("branching_limit", s.branching_limit.to_string())
            .set("blend_sigma", s.actions.blend_sigma.to_string())
            .set("scale_min", s.actions.scale_range.0.to_string())
            .set("scale_max", s.actions.scale_range.1.to_string())
            .set("blend_weight", s.actions.weights[0].to_string())
            .set("scale_weight", s.actions.weights[1].to_string())
            .set("reset_weight", s.actions.weights[2].to_string())
            .set("top_k", s.top_k.to_string())
            .set("layers", s.layers.iter().map(|l| l.weight_name()).collect::<Vec<_>>().join(", "))
            .set("check_invariants", s.check_invariants.to_string())
            .set("seed", s.seed.to_string());
        write_profile(&mut ini, "source_profile", &self.source);
        write_profile(&mut ini, "source_test_profile", &self.source_test);
        write_profile(&mut ini, "target_profile", &self.target);
        ini.with_section(Some("sample"))
            .set("count", self.sample_count.to_string())
            .set("temperature", self.sample_temperature.to_string());
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("in-memory");
        String::from_utf8(buf).expect("utf-8")
    }

    /// SHA-256 of the resolved INI text.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_ini().as_bytes()))
    }

    pub fn comparison_settings(&self) -> ComparisonSettings {
        ComparisonSettings {
            approaches: self.approaches.clone(),
            folds: self.folds,
            finetune: self.finetune.clone(),
            distill: self.distill,
            search: self.search.clone(),
            seed: self.seed,
            config_hash: self.hash(),
        }
    }
}

fn get<T: FromStr>(props: &Properties, section: &str, key: &str) -> Result<Option<T>, HarnessError>
where
    T::Err: Display,
{
    props
        .get(key)
        .map(|v| v.trim().parse::<T>().map_err(|e| HarnessError::Config(format!("[{section}] {key} = {v:?}: {e}"))))
        .transpose()
}

fn check_keys(section: &str, props: &Properties, known: &[&str]) -> Result<(), HarnessError> {
    for (k, _) in props.iter() {
        if !known.contains(&k) {
            return Err(HarnessError::Config(format!("unknown key [{section}] {k}")));
        }
    }
    Ok(())
}

const TRAIN_KEYS: [&str; 9] = [
    "learning_rate",
    "batch_size",
    "max_epochs",
    "beta_max",
    "beta_warmup_epochs",
    "free_bits",
    "early_stop_patience",
    "grad_clip_norm",
    "seed",
];

fn train_section(p: &Properties, name: &str, d: TrainConfig, seed: u64) -> Result<TrainConfig, HarnessError> {
    check_keys(name, p, &TRAIN_KEYS)?;
    Ok(TrainConfig {
        learning_rate: get(p, name, "learning_rate")?.unwrap_or(d.learning_rate),
        batch_size: get(p, name, "batch_size")?.unwrap_or(d.batch_size),
        max_epochs: get(p, name, "max_epochs")?.unwrap_or(d.max_epochs),
        beta_max: get(p, name, "beta_max")?.unwrap_or(d.beta_max),
        beta_warmup_epochs: get(p, name, "beta_warmup_epochs")?.unwrap_or(d.beta_warmup_epochs),
        free_bits: get(p, name, "free_bits")?.unwrap_or(d.free_bits),
        early_stop_patience: get(p, name, "early_stop_patience")?.unwrap_or(d.early_stop_patience),
        grad_clip_norm: get(p, name, "grad_clip_norm")?.unwrap_or(d.grad_clip_norm),
        seed: get(p, name, "seed")?.unwrap_or(seed),
    })
}

fn write_train(ini: &mut Ini, name: &str, t: &TrainConfig) {
    ini.with_section(Some(name))
        .set("learning_rate", t.learning_rate.to_string())
        .set("batch_size", t.batch_size.to_string())
        .set("max_epochs", t.max_epochs.to_string())
        .set("beta_max", t.beta_max.to_string())
        .set("beta_warmup_epochs", t.beta_warmup_epochs.to_string())
        .set("free_bits", t.free_bits.to_string())
        .set("early_stop_patience", t.early_stop_patience.to_string())
        .set("grad_clip_norm", t.grad_clip_norm.to_string())
        .set("seed", t.seed.to_string());
}

fn search_section(p: &Properties, seed: u64) -> Result<SearchConfig, HarnessError> {
    const KEYS: [&str; 16] = [
        "iterations",
        "rollouts_per_iteration",
        "rollout_depth",
        "epsilon",
        "ucb_exploration",
        "branching_limit",
        "blend_sigma",
        "scale_min",
        "scale_max",
        "blend_weight",
        "scale_weight",
        "reset_weight",
        "top_k",
        "layers",
        "check_invariants",
        "seed",
    ];
    check_keys("search", p, &KEYS)?;
    let d = SearchConfig::default();
    let a = ActionDistribution::default();
    let g = |k: &str| get::<f64>(p, "search", k);
    let layers = match p.get("layers") {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<ExpandedLayer>().map_err(HarnessError::Config))
            .collect::<Result<Vec<_>, _>>()?,
        None => d.layers.clone(),
    };
    Ok(SearchConfig {
        iterations: get(p, "search", "iterations")?.unwrap_or(d.iterations),
        rollouts_per_iteration: get(p, "search", "rollouts_per_iteration")?.unwrap_or(d.rollouts_per_iteration),
        rollout_depth: get(p, "search", "rollout_depth")?.unwrap_or(d.rollout_depth),
        epsilon: g("epsilon")?.unwrap_or(d.epsilon),
        ucb_exploration: g("ucb_exploration")?.unwrap_or(d.ucb_exploration),
        branching_limit: get(p, "search", "branching_limit")?.unwrap_or(d.branching_limit),
        actions: ActionDistribution {
            blend_sigma: g("blend_sigma")?.unwrap_or(a.blend_sigma),
            scale_range: (g("scale_min")?.unwrap_or(a.scale_range.0), g("scale_max")?.unwrap_or(a.scale_range.1)),
            weights: [
                g("blend_weight")?.unwrap_or(a.weights[0]),
                g("scale_weight")?.unwrap_or(a.weights[1]),
                g("reset_weight")?.unwrap_or(a.weights[2]),
            ],
        },
        top_k: get(p, "search", "top_k")?.unwrap_or(d.top_k),
        layers,
        check_invariants: get(p, "search", "check_invariants")?.unwrap_or(d.check_invariants),
        seed: get(p, "search", "seed")?.unwrap_or(seed),
    })
}

const PROFILE_KEYS: [&str; 16] = [
    "preset",
    "name",
    "low",
    "high",
    "scale",
    "tonics",
    "repeat_prob",
    "step_prob",
    "leap_prob",
    "durations",
    "rest_prob",
    "motif_steps",
    "motif_repeats",
    "max_transpose",
    "transpose_prob",
    "velocity",
];

fn profile_section(p: &Properties, name: &str, preset: &str, seed: u64) -> Result<GenreProfile, HarnessError> {
    let preset = p.get("preset").unwrap_or(preset);
    let base = GenreProfile::preset(preset).ok_or_else(|| HarnessError::Config(format!("[{name}] unknown preset {preset:?}")))?;
    profile_section_from(p, name, base, seed)
}

fn profile_section_from(p: &Properties, name: &str, base: GenreProfile, seed: u64) -> Result<GenreProfile, HarnessError> {
    let mut known = PROFILE_KEYS.to_vec();
    known.push("seed");
    check_keys(name, p, &known)?;
    let base = match p.get("preset") {
        Some(preset) => GenreProfile::preset(preset).ok_or_else(|| HarnessError::Config(format!("[{name}] unknown preset {preset:?}")))?,
        None => base,
    };
    let list = |key: &str| -> Result<Option<Vec<u8>>, HarnessError> {
        p.get(key)
            .map(|v| {
                v.split(',')
                    .map(|x| x.trim().parse::<u8>().map_err(|e| HarnessError::Config(format!("[{name}] {key}: {e}"))))
                    .collect()
            })
            .transpose()
    };
    let durations = p
        .get("durations")
        .map(|v| {
            v.split(',')
                .map(|pair| {
                    let (len, w) = pair
                        .split_once(':')
                        .ok_or_else(|| HarnessError::Config(format!("[{name}] durations entry {pair:?} is not len:weight")))?;
                    let len = len.trim().parse::<usize>().map_err(|e| HarnessError::Config(format!("[{name}] durations: {e}")))?;
                    let w = w.trim().parse::<f64>().map_err(|e| HarnessError::Config(format!("[{name}] durations: {e}")))?;
                    Ok((len, w))
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        })
        .transpose()?;
    Ok(GenreProfile {
        name: p.get("name").map(str::to_string).unwrap_or(base.name),
        low: get(p, name, "low")?.unwrap_or(base.low),
        high: get(p, name, "high")?.unwrap_or(base.high),
        scale: list("scale")?.unwrap_or(base.scale),
        tonics: list("tonics")?.unwrap_or(base.tonics),
        repeat_prob: get(p, name, "repeat_prob")?.unwrap_or(base.repeat_prob),
        step_prob: get(p, name, "step_prob")?.unwrap_or(base.step_prob),
        leap_prob: get(p, name, "leap_prob")?.unwrap_or(base.leap_prob),
        durations: durations.unwrap_or(base.durations),
        rest_prob: get(p, name, "rest_prob")?.unwrap_or(base.rest_prob),
        motif_steps: get(p, name, "motif_steps")?.unwrap_or(base.motif_steps),
        motif_repeats: get(p, name, "motif_repeats")?.unwrap_or(base.motif_repeats),
        max_transpose: get(p, name, "max_transpose")?.unwrap_or(base.max_transpose),
        transpose_prob: get(p, name, "transpose_prob")?.unwrap_or(base.transpose_prob),
        velocity: get(p, name, "velocity")?.unwrap_or(base.velocity),
        seed: get(p, name, "seed")?.unwrap_or(seed),
    })
}

fn write_profile(ini: &mut Ini, name: &str, g: &GenreProfile) {
    let join = |v: &[u8]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
    ini.with_section(Some(name))
        .set("name", g.name.clone())
        .set("low", g.low.to_string())
        .set("high", g.high.to_string())
        .set("scale", join(&g.scale))
        .set("tonics", join(&g.tonics))
        .set("repeat_prob", g.repeat_prob.to_string())
        .set("step_prob", g.step_prob.to_string())
        .set("leap_prob", g.leap_prob.to_string())
        .set("durations", g.durations.iter().map(|(l, w)| format!("{l}:{w}")).collect::<Vec<_>>().join(", "))
        .set("rest_prob", g.rest_prob.to_string())
        .set("motif_steps", g.motif_steps.to_string())
        .set("motif_repeats", g.motif_repeats.to_string())
        .set("max_transpose", g.max_transpose.to_string())
        .set("transpose_prob", g.transpose_prob.to_string())
        .set("velocity", g.velocity.to_string())
        .set("seed", g.seed.to_string());
}
