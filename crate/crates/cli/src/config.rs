//! Flat run configuration. Resolution order, lowest to highest precedence:
//! built-in defaults, the JSON config file, `INTROSPECT_SEED`, command-line
//! flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use introspect::grpo::{TrainConfig, TrainSetup};
use introspect::model::{Backbone, ModelConfig};
use introspect::rollout::{AnnealSchedule, PolicyMode, TempBounds};
use introspect::tasks::{TaskMix, Vocab};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "INTROSPECT_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Selective,
    #[value(name = "always_update")]
    AlwaysUpdate,
    #[value(name = "prompt_level")]
    PromptLevel,
    Fixed,
    Annealed,
}

impl ModeName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeName::Selective => "selective",
            ModeName::AlwaysUpdate => "always_update",
            ModeName::PromptLevel => "prompt_level",
            ModeName::Fixed => "fixed",
            ModeName::Annealed => "annealed",
        }
    }
}

/// Every key has a default, so a config file may list any subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: ModeName,
    /// Temperature used by `fixed` mode.
    pub tau: f64,
    /// Task mix, `kind:difficulty[:weight]` entries separated by commas.
    pub tasks: String,
    pub out: PathBuf,

    pub backbone: Backbone,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub max_len: usize,

    pub lr_token: f64,
    pub lr_temp: f64,
    pub clip_eps: f64,
    pub group_size: usize,
    pub batch_prompts: usize,
    pub inner_epochs: usize,
    pub adv_std_floor: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,

    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_init: f64,

    pub anneal_tau_start: f64,
    pub anneal_tau_floor: f64,
    pub anneal_hold: usize,
    pub anneal_c0: f64,

    pub n_updates: usize,
    /// 0 disables periodic evaluation; the final evaluation always runs.
    pub eval_every: usize,
    pub eval_k: usize,
    pub eval_instances: usize,
    /// 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        let b = TempBounds::default();
        let a = AnnealSchedule::default();
        RunConfig {
            seed: 0,
            mode: ModeName::Selective,
            tau: 1.0,
            tasks: "mod_add:1".into(),
            out: PathBuf::from("runs/default"),
            backbone: m.backbone,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            max_len: m.max_len,
            lr_token: t.lr_token,
            lr_temp: t.lr_temp,
            clip_eps: t.clip_eps,
            group_size: t.group_size,
            batch_prompts: t.batch_prompts,
            inner_epochs: t.inner_epochs,
            adv_std_floor: t.adv_std_floor,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            tau_min: b.tau_min,
            tau_max: b.tau_max,
            tau_init: b.tau_init,
            anneal_tau_start: a.tau_start,
            anneal_tau_floor: a.tau_floor,
            anneal_hold: a.hold,
            anneal_c0: a.c0,
            n_updates: 2000,
            eval_every: 200,
            eval_k: 8,
            eval_instances: 100,
            checkpoint_every: 500,
        }
    }
}

/// Flag mirror of [`RunConfig`]; unset flags leave the resolved value alone.
#[derive(Clone, Debug, Default, Args, Serialize)]
pub struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tasks: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backbone: Option<Backbone>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_token: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_temp: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_prompts: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv_std_floor: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_min: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_init: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anneal_tau_start: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anneal_tau_floor: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anneal_hold: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anneal_c0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_updates: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_instances: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

fn merge(dst: &mut Map<String, Value>, src: Map<String, Value>) {
    for (k, v) in src {
        dst.insert(k, v);
    }
}

fn as_object(v: Value, what: &str) -> Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Usage(format!("{what} must be a JSON object"))),
    }
}

impl RunConfig {
    /// Parses a config document on top of the defaults and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::layered(Some(text), None, &Overrides::default())
    }

    pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, flags: &Overrides) -> Result<Self> {
        let text = file
            .map(|p| std::fs::read_to_string(p).map_err(CliError::io(p)))
            .transpose()?;
        Self::layered(text.as_deref(), env_seed, flags)
    }

    fn layered(file: Option<&str>, env_seed: Option<&str>, flags: &Overrides) -> Result<Self> {
        let mut m = as_object(serde_json::to_value(RunConfig::default()).expect("serializable"), "defaults")?;
        if let Some(text) = file {
            let v: Value = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
            merge(&mut m, as_object(v, "config")?);
        }
        if let Some(s) = env_seed {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got '{s}'")))?;
            m.insert("seed".into(), seed.into());
        }
        merge(&mut m, as_object(serde_json::to_value(flags).expect("serializable"), "flags")?);
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(m)).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.setup()?;
        Ok(cfg)
    }

    pub fn policy_mode(&self) -> Result<PolicyMode> {
        let mode = match self.mode {
            ModeName::Annealed => PolicyMode::Annealed(AnnealSchedule {
                tau_start: self.anneal_tau_start,
                tau_floor: self.anneal_tau_floor,
                hold: self.anneal_hold,
                c0: self.anneal_c0,
                gamma: 1.0,
            }),
            m => PolicyMode::from_name(m.as_str(), self.tau)?,
        };
        if let PolicyMode::Annealed(s) = mode {
            let ok = s.tau_start > 0.0 && s.tau_floor > 0.0 && s.c0 >= 0.0 && s.c0.is_finite();
            if !ok {
                return Err(CliError::Usage("annealing parameters must be positive".into()));
            }
        }
        Ok(mode)
    }

    pub fn bounds(&self) -> TempBounds {
        TempBounds {
            tau_min: self.tau_min,
            tau_max: self.tau_max,
            tau_init: self.tau_init,
        }
    }

    /// Library-level setup; fails on any invalid combination.
    pub fn setup(&self) -> Result<TrainSetup> {
        let train = TrainConfig {
            lr_token: self.lr_token,
            lr_temp: self.lr_temp,
            clip_eps: self.clip_eps,
            group_size: self.group_size,
            batch_prompts: self.batch_prompts,
            inner_epochs: self.inner_epochs,
            adv_std_floor: self.adv_std_floor,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
        };
        train.validate()?;
        let model = ModelConfig {
            vocab_size: Vocab::SIZE,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            max_len: self.max_len,
            backbone: self.backbone,
        };
        model.validate()?;
        let bounds = self.bounds();
        bounds.validate()?;
        if self.eval_k == 0 {
            return Err(CliError::Usage("eval_k must be positive".into()));
        }
        Ok(TrainSetup {
            train,
            model,
            tasks: TaskMix::parse(&self.tasks)?,
            bounds,
            mode: self.policy_mode()?,
            seed: self.seed,
            n_updates: self.n_updates,
            eval_every: self.eval_every,
            eval_k: self.eval_k,
            eval_instances: self.eval_instances,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let flags = Overrides {
            lr_token: Some(0.5),
            ..Default::default()
        };
        let c = RunConfig::layered(Some(r#"{"seed": 3, "lr_token": 0.1, "d_model": 16}"#), Some("9"), &flags).unwrap();
        assert_eq!((c.seed, c.lr_token, c.d_model), (9, 0.5, 16));
        let flags = Overrides {
            seed: Some(4),
            ..Default::default()
        };
        let c = RunConfig::layered(None, Some("9"), &flags).unwrap();
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn round_trips() {
        let c = RunConfig {
            mode: ModeName::AlwaysUpdate,
            tau: 0.7,
            ..Default::default()
        };
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn rejects_bad_documents() {
        for bad in [
            "[]",
            "{",
            r#"{"sed": 1}"#,
            r#"{"mode": "hot"}"#,
            r#"{"d_model": 31}"#,
            r#"{"tasks": "mod_add:9"}"#,
            r#"{"tau_min": 2.0}"#,
            r#"{"group_size": 1}"#,
            r#"{"mode": "fixed", "tau": 0}"#,
        ] {
            assert!(RunConfig::from_json(bad).is_err(), "{bad}");
        }
        assert!(RunConfig::layered(None, Some("x"), &Overrides::default()).is_err());
    }
}
