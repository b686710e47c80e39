//! Transfer baselines: each maps a pretrained model and a target training
//! split to an adapted model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::MelodySequence;
use crate::scalar::Scalar;
use crate::vae::{train_with, Distillation, ModelError, ModelParams, TrainConfig, TrainLog, TrainMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaselineKind {
    NonTransfer,
    ZeroShot,
    FinetuneAll,
    FinetuneLast,
    StudentTeacher,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::NonTransfer,
        BaselineKind::ZeroShot,
        BaselineKind::FinetuneAll,
        BaselineKind::FinetuneLast,
        BaselineKind::StudentTeacher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::NonTransfer => "NonTransfer",
            BaselineKind::ZeroShot => "ZeroShot",
            BaselineKind::FinetuneAll => "FinetuneAll",
            BaselineKind::FinetuneLast => "FinetuneLast",
            BaselineKind::StudentTeacher => "StudentTeacher",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| format!("unknown baseline {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub weight: f64,
    pub temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig { weight: 0.5, temperature: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub train_cfg: TrainConfig,
    /// Only meaningful for `StudentTeacher`.
    pub distill: Option<DistillConfig>,
    /// Seed for the fresh initialisation used by NonTransfer and StudentTeacher.
    pub init_seed: u64,
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind, train_cfg: TrainConfig) -> Self {
        let distill = (kind == BaselineKind::StudentTeacher).then(DistillConfig::default);
        let init_seed = train_cfg_seed(&train_cfg);
        BaselineSpec { kind, train_cfg, distill, init_seed }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match (self.kind, &self.distill) {
            (BaselineKind::StudentTeacher, Some(d)) => {
                if !(d.weight >= 0.0 && d.weight.is_finite()) || !(d.temperature > 0.0 && d.temperature.is_finite()) {
                    return Err(ModelError::InvalidConfig(format!("distillation {d:?}")));
                }
            }
            (BaselineKind::StudentTeacher, None) => {
                return Err(ModelError::InvalidConfig("StudentTeacher needs distillation settings".into()))
            }
            (_, Some(_)) => {
                return Err(ModelError::InvalidConfig(format!("{} takes no distillation settings", self.kind)))
            }
            (_, None) => {}
        }
        if self.kind != BaselineKind::ZeroShot {
            self.train_cfg.validate()?;
        }
        Ok(())
    }
}

fn train_cfg_seed(cfg: &TrainConfig) -> u64 {
    cfg.seed.wrapping_add(0x5eed)
}

/// Adapts `pretrained` to `train_split` according to `spec`.
pub fn run_baseline<T: Scalar>(
    spec: &BaselineSpec,
    pretrained: &ModelParams<T>,
    train_split: &[MelodySequence],
) -> Result<(ModelParams<T>, TrainLog), ModelError> {
    spec.validate()?;
    if spec.kind == BaselineKind::ZeroShot {
        return Ok((pretrained.clone(), TrainLog::default()));
    }
    if train_split.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let cfg = &spec.train_cfg;
    match spec.kind {
        BaselineKind::ZeroShot => unreachable!(),
        BaselineKind::NonTransfer => {
            let fresh = ModelParams::init(spec.init_seed, pretrained.dims);
            train_with(&fresh, train_split, cfg, &TrainMask::all(), None)
        }
        BaselineKind::FinetuneAll => train_with(pretrained, train_split, cfg, &TrainMask::all(), None),
        BaselineKind::FinetuneLast => train_with(pretrained, train_split, cfg, &TrainMask::output_head(), None),
        BaselineKind::StudentTeacher => {
            let d = spec.distill.expect("validated");
            let fresh = ModelParams::init(spec.init_seed, pretrained.dims);
            let distill = Distillation { teacher: pretrained, weight: d.weight, temperature: d.temperature };
            train_with(&fresh, train_split, cfg, &TrainMask::all(), Some(&distill))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::STEPS;
    use crate::vae::Dims;

    fn data() -> Vec<MelodySequence> {
        (0..5)
            .map(|i| {
                let mut t = [1u8; STEPS];
                t[0] = 30 + i;
                t[2] = 0;
                t[16] = 33;
                MelodySequence::new(t, format!("s{i}"))
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig { max_epochs: 2, batch_size: 2, ..Default::default() }
    }

    #[test]
    fn names_parse_loosely() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert_eq!("finetune-last".parse::<BaselineKind>().unwrap(), BaselineKind::FinetuneLast);
        assert!("nope".parse::<BaselineKind>().is_err());
    }

    #[test]
    fn zero_shot_is_identity_even_without_data() {
        let p = ModelParams::<f64>::init(1, Dims::new(6, 3));
        let (q, _) = run_baseline(&BaselineSpec::new(BaselineKind::ZeroShot, cfg()), &p, &[]).unwrap();
        assert!(q.bit_eq(&p));
    }

    #[test]
    fn empty_split_is_rejected() {
        let p = ModelParams::<f64>::init(1, Dims::new(6, 3));
        let r = run_baseline(&BaselineSpec::new(BaselineKind::FinetuneAll, cfg()), &p, &[]);
        assert!(matches!(r, Err(ModelError::EmptyDataset)));
    }

    #[test]
    fn distillation_settings_only_for_student_teacher() {
        let mut s = BaselineSpec::new(BaselineKind::FinetuneAll, cfg());
        s.distill = Some(DistillConfig::default());
        assert!(s.validate().is_err());
        let mut s = BaselineSpec::new(BaselineKind::StudentTeacher, cfg());
        s.distill.as_mut().unwrap().temperature = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn student_teacher_without_weight_matches_non_transfer() {
        let p = ModelParams::<f64>::init(1, Dims::new(6, 3));
        let nt = run_baseline(&BaselineSpec::new(BaselineKind::NonTransfer, cfg()), &p, &data()).unwrap().0;
        let mut st = BaselineSpec::new(BaselineKind::StudentTeacher, cfg());
        st.distill.as_mut().unwrap().weight = 0.0;
        let st = run_baseline(&st, &p, &data()).unwrap().0;
        assert!(nt.bit_eq(&st));
        assert!(!nt.bit_eq(&p));
    }
}
