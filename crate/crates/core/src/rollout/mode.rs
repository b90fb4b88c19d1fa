use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Temperature range the head maps into, and the starting temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempBounds {
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_init: f64,
}

impl Default for TempBounds {
    fn default() -> Self {
        TempBounds {
            tau_min: 0.6,
            tau_max: 1.5,
            tau_init: 1.0,
        }
    }
}

impl TempBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.tau_min, self.tau_max, self.tau_init]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0)
            && self.tau_min < self.tau_max
            && (self.tau_min..=self.tau_max).contains(&self.tau_init);
        if !ok {
            return Err(invalid(format!("invalid temperature bounds {self:?}")));
        }
        Ok(())
    }

    /// `tau_min + z (tau_max - tau_min)`.
    pub fn affine(&self, z: f64) -> f64 {
        self.tau_min + z * (self.tau_max - self.tau_min)
    }

    pub fn contains(&self, tau: f64) -> bool {
        (self.tau_min..=self.tau_max).contains(&tau)
    }
}

/// Position-wise annealing: hold `tau_start` for the first `hold` tokens, then
/// `max(tau_floor, tau_start * gamma^t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub tau_start: f64,
    pub tau_floor: f64,
    pub hold: usize,
    /// Initial decay coefficient `c0` used by [`AnnealSchedule::decay_rate`].
    pub c0: f64,
    /// Current per-token decay; refreshed by the trainer every update.
    pub gamma: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            tau_start: 1.2,
            tau_floor: 0.1,
            hold: 10,
            c0: 25.0,
            gamma: 1.0,
        }
    }
}

impl AnnealSchedule {
    /// Temperature at 1-based decoding position `t`.
    pub fn tau_at(&self, t: usize) -> f64 {
        if t <= self.hold {
            self.tau_start
        } else {
            (self.tau_start * self.gamma.powi(t as i32)).max(self.tau_floor)
        }
    }

    /// `exp(-(c0 / avg_len) * (update / total_updates))`.
    pub fn decay_rate(&self, update: usize, total_updates: usize, avg_len: f64) -> f64 {
        if total_updates == 0 || !(avg_len > 0.0) {
            return 1.0;
        }
        (-(self.c0 / avg_len) * (update as f64 / total_updates as f64)).exp()
    }
}

/// How temperatures are chosen during generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyMode {
    /// Learned gate decides when to resample; learned Beta decides the value.
    Selective,
    /// Gate forced open: a fresh Beta draw at every token.
    AlwaysUpdate,
    /// One Beta draw at the first token, then held for the whole response.
    PromptLevel,
    Fixed { tau: f64 },
    Annealed(AnnealSchedule),
}

impl PolicyMode {
    /// Whether the temperature head is consulted at all.
    pub fn uses_head(&self) -> bool {
        matches!(
            self,
            PolicyMode::Selective | PolicyMode::AlwaysUpdate | PolicyMode::PromptLevel
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyMode::Selective => "selective",
            PolicyMode::AlwaysUpdate => "always_update",
            PolicyMode::PromptLevel => "prompt_level",
            PolicyMode::Fixed { .. } => "fixed",
            PolicyMode::Annealed(_) => "annealed",
        }
    }

    /// Builds a mode from its name; `tau` is used by `fixed` only.
    pub fn from_name(name: &str, tau: f64) -> Result<Self> {
        Ok(match name {
            "selective" => PolicyMode::Selective,
            "always_update" => PolicyMode::AlwaysUpdate,
            "prompt_level" => PolicyMode::PromptLevel,
            "fixed" => {
                if !(tau.is_finite() && tau > 0.0) {
                    return Err(invalid(format!("fixed temperature must be positive, got {tau}")));
                }
                PolicyMode::Fixed { tau }
            }
            "annealed" => PolicyMode::Annealed(AnnealSchedule::default()),
            _ => return Err(Error::InvalidArgument(format!("unknown mode '{name}'"))),
        })
    }
}
