use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::GroupRollout;

/// Per-update diagnostics. `token_loss`/`temp_loss` are negated objectives.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub update: usize,
    pub mean_reward: f64,
    pub token_loss: f64,
    pub temp_loss: f64,
    pub mean_entropy: f64,
    pub mean_tau: f64,
    pub tau_min_obs: f64,
    pub tau_max_obs: f64,
    pub frac_c1: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_phi: f64,
    /// Mean over trajectories of the within-sequence temperature std.
    pub tau_std_within: f64,
    pub mean_len: f64,
}

impl LossReport {
    pub const CSV_HEADER: [&'static str; 13] = [
        "update",
        "mean_reward",
        "token_loss",
        "temp_loss",
        "mean_entropy",
        "mean_tau",
        "tau_min_obs",
        "tau_max_obs",
        "frac_c1",
        "grad_norm_theta",
        "grad_norm_phi",
        "tau_std_within",
        "mean_len",
    ];

    /// Fills the rollout statistics; losses and gradient norms stay untouched.
    pub fn from_rollouts(update: usize, batch: &[GroupRollout]) -> Self {
        let mut r = LossReport {
            update,
            tau_min_obs: f64::INFINITY,
            tau_max_obs: f64::NEG_INFINITY,
            ..Default::default()
        };
        let (mut n_traj, mut n_steps, mut n_c1) = (0usize, 0usize, 0usize);
        let (mut reward, mut ent, mut tau, mut tau_std) = (0.0, 0.0, 0.0, 0.0);
        for g in batch {
            for t in &g.trajectories {
                n_traj += 1;
                reward += t.reward;
                tau_std += t.tau_std();
                for (s, h) in t.steps.iter().zip(&t.entropies) {
                    n_steps += 1;
                    n_c1 += usize::from(s.c);
                    ent += h;
                    tau += s.tau;
                    r.tau_min_obs = r.tau_min_obs.min(s.tau);
                    r.tau_max_obs = r.tau_max_obs.max(s.tau);
                }
            }
        }
        if n_traj > 0 {
            r.mean_reward = reward / n_traj as f64;
            r.tau_std_within = tau_std / n_traj as f64;
            r.mean_len = n_steps as f64 / n_traj as f64;
        }
        if n_steps > 0 {
            r.mean_entropy = ent / n_steps as f64;
            r.mean_tau = tau / n_steps as f64;
            r.frac_c1 = n_c1 as f64 / n_steps as f64;
        }
        r
    }

    pub fn is_finite(&self) -> bool {
        [
            self.token_loss,
            self.temp_loss,
            self.grad_norm_theta,
            self.grad_norm_phi,
        ]
        .iter()
        .all(|x| x.is_finite())
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.update.to_string(),
            self.mean_reward.to_string(),
            self.token_loss.to_string(),
            self.temp_loss.to_string(),
            self.mean_entropy.to_string(),
            self.mean_tau.to_string(),
            self.tau_min_obs.to_string(),
            self.tau_max_obs.to_string(),
            self.frac_c1.to_string(),
            self.grad_norm_theta.to_string(),
            self.grad_norm_phi.to_string(),
            self.tau_std_within.to_string(),
            self.mean_len.to_string(),
        ]
    }
}

/// Reads a metrics CSV. Columns are matched by header name; extra columns
/// are ignored and every [`LossReport`] field must be present.
pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<LossReport>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    for col in LossReport::CSV_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Format(format!("metrics CSV lacks column '{col}'")));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<LossReport>().enumerate() {
        rows.push(rec.map_err(|e| Error::Format(format!("metrics row {}: {e}", i + 1)))?);
    }
    Ok(rows)
}
