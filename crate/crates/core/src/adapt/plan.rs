use serde::{Deserialize, Serialize};

use super::train::StageConfig;
use super::AdaptError;
use crate::model::{Stage, TrainHyper};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Cat,
    Tat,
    Ft,
}

impl StageKind {
    pub fn stage(self) -> Stage {
        match self {
            StageKind::Cat => Stage::Cat,
            StageKind::Tat => Stage::Tat,
            StageKind::Ft => Stage::Ft,
        }
    }
}

/// One stage of a plan. `data` names monolingual corpora for `cat` and
/// `tat`; `ft` trains on the train split of the cell's data setting.
/// `generator` names the plan whose final model back-translates for `tat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStage {
    pub kind: StageKind,
    #[serde(default)]
    pub data: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default)]
    pub both_orientations: bool,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub eval_every: u64,
    #[serde(default)]
    pub hyper: TrainHyper,
}

fn default_steps() -> u64 {
    StageConfig::default().steps
}

fn default_batch() -> usize {
    StageConfig::default().batch_size
}

impl PlanStage {
    pub fn new(kind: StageKind, steps: u64, batch_size: usize) -> Self {
        PlanStage {
            kind,
            data: Vec::new(),
            generator: None,
            both_orientations: false,
            steps,
            batch_size,
            eval_every: 0,
            hyper: TrainHyper::default(),
        }
    }

    pub fn stage_config(&self) -> StageConfig {
        StageConfig { steps: self.steps, batch_size: self.batch_size, hyper: self.hyper.clone(), eval_every: self.eval_every }
    }
}

/// Ordered training stages applied to a freshly initialized model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    #[serde(default)]
    pub stages: Vec<PlanStage>,
}

impl TrainPlan {
    pub fn new(stages: Vec<PlanStage>) -> Self {
        TrainPlan { stages }
    }

    /// Stage order `cat* tat* ft*`, bound data, positive batch sizes.
    pub fn validate(&self) -> Result<(), AdaptError> {
        for (i, w) in self.stages.windows(2).enumerate() {
            if w[1].kind < w[0].kind {
                return Err(AdaptError::InvalidPlan(format!("stage {} ({:?}) follows {:?}", i + 1, w[1].kind, w[0].kind)));
            }
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.batch_size == 0 {
                return Err(AdaptError::InvalidPlan(format!("stage {i}: batch_size must be positive")));
            }
            match s.kind {
                StageKind::Cat if s.data.is_empty() => {
                    return Err(AdaptError::InvalidPlan(format!("stage {i}: cat needs monolingual data")));
                }
                StageKind::Tat if s.data.is_empty() || s.generator.is_none() => {
                    return Err(AdaptError::InvalidPlan(format!("stage {i}: tat needs monolingual data and a generator")));
                }
                StageKind::Ft if !s.data.is_empty() => {
                    return Err(AdaptError::InvalidPlan(format!("stage {i}: ft trains on the cell's data setting")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat() -> PlanStage {
        PlanStage { data: vec!["m".into()], ..PlanStage::new(StageKind::Cat, 1, 1) }
    }

    #[test]
    fn order_is_enforced() {
        let ft = PlanStage::new(StageKind::Ft, 1, 1);
        assert!(TrainPlan::new(vec![cat(), cat(), ft.clone()]).validate().is_ok());
        assert!(TrainPlan::new(vec![ft, cat()]).validate().is_err());
        assert!(TrainPlan::default().validate().is_ok());
    }

    #[test]
    fn stages_need_data() {
        let mut c = cat();
        c.data.clear();
        assert!(TrainPlan::new(vec![c]).validate().is_err());
        let tat = PlanStage { data: vec!["m".into()], ..PlanStage::new(StageKind::Tat, 1, 1) };
        assert!(TrainPlan::new(vec![tat]).validate().is_err());
    }

    #[test]
    fn parses_from_toml() {
        let p: TrainPlan = toml::from_str(
            "[[stages]]\nkind = \"cat\"\ndata = [\"mono\"]\nsteps = 5\nhyper = { lr = 0.001 }\n[[stages]]\nkind = \"ft\"\n",
        )
        .unwrap();
        assert_eq!(p.stages[0].steps, 5);
        assert_eq!(p.stages[0].hyper.lr, 0.001);
        assert_eq!(p.stages[1].batch_size, 32);
        assert!(toml::from_str::<TrainPlan>("[[stages]]\nkind = \"ft\"\nstpes = 3\n").is_err());
    }
}
