//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Run alone with `cargo test --release -p introspect --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use introspect::grpo::{
    advantages, attach_advantages, temp_loss, token_loss, train, LossReport, Objective, TrainConfig,
    TrainEvent, TrainSetup,
};
use introspect::model::{
    self, head_forward, init_params, Backbone, ModelConfig, ModelParams, ParamSet,
};
use introspect::numkit::{
    beta_log_pdf, beta_sample, entropy, sigmoid, softmax_with_temperature, softplus, BetaParams, Rng,
    EPS_STAB,
};
use introspect::rollout::{
    generate_group, mode_temp_log_prob_and_grad, GroupRollout, PolicyMode, TempBounds, Trajectory,
    TrajectoryStep,
};
use introspect::tasks::{TaskInstance, TaskKind, TaskMix};

const SEEDS: [u64; 3] = [0, 1, 2];
const N_UPDATES: usize = 2000;
const TAIL: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

// ---------------------------------------------------------------- A1

fn a1_beta() -> Outcome {
    let grid = [0.5, 1.0, 2.0, 5.0];
    let n = 10_000;
    let mut worst_mass: f64 = 0.0;
    let mut worst_se: f64 = 0.0;
    let mut rng = Rng::new(11);
    for &a in &grid {
        for &b in &grid {
            let p = BetaParams::new(a, b).unwrap();
            // z = sin^2(pi t / 2) keeps the integrand bounded at the endpoints
            let f = |t: f64| {
                let t = t.clamp(1e-7, 1.0 - 1e-7);
                let s = (std::f64::consts::FRAC_PI_2 * t).sin();
                let z = s * s;
                let dz = std::f64::consts::FRAC_PI_2 * (std::f64::consts::PI * t).sin();
                (beta_log_pdf(z, p).unwrap() + dz.ln()).exp()
            };
            let h = 1.0 / (n - 1) as f64;
            let mut mass = 0.5 * (f(0.0) + f(1.0));
            for i in 1..n - 1 {
                mass += f(i as f64 * h);
            }
            mass *= h;
            worst_mass = worst_mass.max((mass - 1.0).abs());

            let draws = 100_000;
            let xs: Vec<f64> = (0..draws).map(|_| beta_sample(p, &mut rng)).collect();
            let m = xs.iter().sum::<f64>() / draws as f64;
            let c2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / draws as f64;
            let c4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / draws as f64;
            let mean = a / (a + b);
            let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
            let se_mean = (var / draws as f64).sqrt();
            let se_var = ((c4 - c2 * c2) / draws as f64).sqrt();
            worst_se = worst_se
                .max((m - mean).abs() / se_mean)
                .max((c2 - var).abs() / se_var);
        }
    }
    outcome(
        worst_mass < 1e-3 && worst_se < 3.0,
        format!("max |mass-1| {worst_mass:.2e}, max moment deviation {worst_se:.2} SE"),
    )
}

// ---------------------------------------------------------------- A2

fn nudged(mut params: ModelParams, scale: f64, seed: u64) -> ModelParams {
    let mut rng = Rng::new(seed);
    for (_, _, t) in params.tensors_mut() {
        for x in t.data.iter_mut() {
            *x += scale * rng.normal();
        }
    }
    params
}

fn toy_params(backbone: Backbone, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        vocab_size: 12,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        max_len: 8,
        backbone,
    };
    nudged(init_params(&cfg, seed).unwrap(), 0.3, seed + 100)
}

/// Two hand-built trajectories over a three-token prompt: six tokens in total.
fn toy_group(params: &ModelParams, mode: PolicyMode) -> GroupRollout {
    let instance = TaskInstance {
        kind: TaskKind::ModAdd,
        difficulty: 1,
        prompt: vec![1, 10, 5],
        gold: vec![6],
    };
    let bounds = TempBounds::default();
    let plans: [&[(usize, bool, f64)]; 2] = [
        &[(3, true, 0.3), (7, false, 0.0), (2, true, 0.8)],
        &[(4, false, 0.0), (9, true, 0.55), (0, false, 0.0)],
    ];
    let mut trajectories = Vec::new();
    for plan in plans {
        let mut tokens = instance.prompt.clone();
        tokens.extend(plan[..plan.len() - 1].iter().map(|s| s.0));
        let trace = model::forward(params, &tokens).unwrap();
        let mut tau = bounds.tau_init;
        let mut steps = Vec::new();
        for (k, &(y, c, z)) in plan.iter().enumerate() {
            let (c, z) = match mode {
                PolicyMode::AlwaysUpdate => (true, if c { z } else { 0.4 }),
                PolicyMode::PromptLevel => (k == 0, if k == 0 { 0.7 } else { z }),
                _ => (c, z),
            };
            let z = c.then_some(z);
            if let Some(z) = z {
                tau = bounds.affine(z);
            }
            let pos = instance.prompt.len() - 1 + k;
            let p = softmax_with_temperature(&trace.logits[pos], tau).unwrap();
            let (lt, _) = mode_temp_log_prob_and_grad(&trace.controls[pos], c, z, &mode).unwrap();
            steps.push(TrajectoryStep {
                c,
                z,
                tau,
                y,
                logp_token_old: p[y].ln(),
                logp_temp_old: lt,
            });
        }
        trajectories.push(Trajectory {
            steps,
            entropies: Vec::new(),
            reward: 0.0,
        });
    }
    GroupRollout {
        instance,
        mode,
        bounds,
        trajectories,
        rewards: vec![1.0, 0.0],
        advantages: Some(vec![0.8, -1.3]),
    }
}

/// Max relative error of the analytic gradient against central differences,
/// plus whether every gradient outside `set` is exactly zero.
fn fd_error(f: &dyn Fn(&ModelParams) -> Objective, mut params: ModelParams, set: ParamSet) -> (f64, bool) {
    let grads = f(&params).grads;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut isolated = true;
    let n = params.tensors().len();
    for ti in 0..n {
        let (s, len) = {
            let v = params.tensors();
            (v[ti].1, v[ti].2.data.len())
        };
        for i in 0..len {
            let ana = grads.tensors()[ti].2.data[i];
            if s != set {
                isolated &= ana == 0.0;
                continue;
            }
            let orig = params.tensors()[ti].2.data[i];
            params.tensors_mut()[ti].2.data[i] = orig + h;
            let vp = f(&params).value;
            params.tensors_mut()[ti].2.data[i] = orig - h;
            let vm = f(&params).value;
            params.tensors_mut()[ti].2.data[i] = orig;
            worst = worst.max(rel_err(ana, (vp - vm) / (2.0 * h)));
        }
    }
    (worst, isolated)
}

fn a2_gradients() -> Outcome {
    let cfg = TrainConfig::default();
    let mut worst: f64 = 0.0;
    let mut isolated = true;
    let mut checks = 0;
    for backbone in [Backbone::Transformer, Backbone::Gru] {
        for mode in [PolicyMode::Selective, PolicyMode::AlwaysUpdate, PolicyMode::PromptLevel] {
            // Snapshot from nearby params so ratios straddle the clip range.
            let params = toy_params(backbone, 4);
            let old = nudged(params.clone(), 0.1, 5);
            let group = toy_group(&old, mode);
            let tok = |p: &ModelParams| token_loss(p, &group, &cfg).unwrap();
            let tmp = |p: &ModelParams| temp_loss(p, &group, &cfg).unwrap();
            for (f, set) in [(&tok as &dyn Fn(&ModelParams) -> Objective, ParamSet::Theta), (&tmp, ParamSet::Phi)] {
                let (e, iso) = fd_error(f, params.clone(), set);
                worst = worst.max(e);
                isolated &= iso;
                checks += 1;
            }
        }
    }
    outcome(
        worst < 1e-4 && isolated,
        format!("{checks} loss/backbone/mode checks, max relative error {worst:.2e}, disjoint sets {isolated}"),
    )
}

// ---------------------------------------------------------------- A3

fn a3_advantages() -> Outcome {
    let floor = 1e-8;
    let mut rng = Rng::new(5);
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    let mut groups = 0;
    while groups < 1000 {
        let r: Vec<f64> = (0..8).map(|_| (rng.uniform() < 0.4) as u8 as f64).collect();
        let mu = r.iter().sum::<f64>() / 8.0;
        let sd = (r.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 8.0).sqrt();
        if sd == 0.0 {
            continue;
        }
        groups += 1;
        let a = advantages(&r, floor);
        let m = a.iter().sum::<f64>() / 8.0;
        let s = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 8.0).sqrt();
        worst_mean = worst_mean.max(m.abs());
        worst_std = worst_std.max((s - sd / (sd + floor)).abs());
    }
    let flat = [0.0, 1.0]
        .iter()
        .flat_map(|&v| advantages(&[v; 8], floor))
        .fold(0.0f64, |m, x| m.max(x.abs()));
    outcome(
        worst_mean < 1e-9 && worst_std < 1e-6 && flat < 1e-6,
        format!("max |mean| {worst_mean:.1e}, max std error {worst_std:.1e}, degenerate max |A| {flat:.1e}"),
    )
}

// ---------------------------------------------------------------- A4

fn a4_softmax() -> Outcome {
    let mut rng = Rng::new(9);
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for _ in 0..1000 {
        let n = 2 + rng.range_inclusive(0, 30) as usize;
        let l: Vec<f64> = (0..n).map(|_| 4.0 * rng.normal()).collect();
        let mx = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = l.iter().map(|x| (x - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        let p = softmax_with_temperature(&l, 1.0).unwrap();
        for (a, b) in p.as_slice().iter().zip(&e) {
            worst = worst.max((a - b / s).abs());
        }
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=90 {
            let h = entropy(&softmax_with_temperature(&l, 0.6 + 0.01 * k as f64).unwrap());
            monotone &= h >= prev - 1e-12;
            prev = h;
        }
    }
    outcome(
        worst < 1e-12 && monotone,
        format!("max |softmax diff| {worst:.1e}, entropy nondecreasing {monotone}"),
    )
}

// ---------------------------------------------------------------- A5, A6

fn rollout_batch(params: &ModelParams, min_steps: usize, seed: u64) -> Vec<GroupRollout> {
    let mix = TaskMix::parse("mod_add:1,multi_digit_add:2,sort:3").unwrap();
    let bounds = TempBounds::default();
    let root = Rng::new(seed);
    let mut out = Vec::new();
    let mut steps = 0;
    let mut j = 0;
    while steps < min_steps {
        let inst = mix.sample(&mut root.split(2 * j)).unwrap();
        let g = generate_group(params, &inst, 8, &bounds, &PolicyMode::Selective, &root.split(2 * j + 1)).unwrap();
        steps += g.trajectories.iter().map(|t| t.steps.len()).sum::<usize>();
        out.push(g);
        j += 1;
    }
    out
}

fn a5_carry_over() -> Outcome {
    let params = init_params(&ModelConfig::default(), 21).unwrap();
    let b = TempBounds::default();
    let batch = rollout_batch(&params, 10_000, 22);
    let (mut n, mut held, mut resampled, mut bad) = (0, 0, 0, 0);
    for g in &batch {
        for t in &g.trajectories {
            let mut prev = b.tau_init;
            for s in &t.steps {
                n += 1;
                let ok = match (s.c, s.z) {
                    (false, None) => {
                        held += 1;
                        s.tau == prev
                    }
                    (true, Some(z)) => {
                        resampled += 1;
                        s.tau == b.tau_min + z * (b.tau_max - b.tau_min)
                    }
                    _ => false,
                };
                if !ok || !(b.tau_min..=b.tau_max).contains(&s.tau) {
                    bad += 1;
                }
                prev = s.tau;
            }
        }
    }
    outcome(
        bad == 0 && held > 0 && resampled > 0,
        format!("{n} steps ({held} held, {resampled} resampled), {bad} violations"),
    )
}

fn a6_on_policy() -> Outcome {
    let cfg = ModelConfig::default();
    let params = nudged(init_params(&cfg, 31).unwrap(), 0.05, 32);
    let mut batch = rollout_batch(&params, 2000, 33);
    let (mut n, mut mismatched) = (0, 0);
    for g in &batch {
        for (i, t) in g.trajectories.iter().enumerate() {
            let trace = model::forward(&params, &g.decision_tokens(i)).unwrap();
            let off = g.instance.prompt.len() - 1;
            for (k, s) in t.steps.iter().enumerate() {
                let p = softmax_with_temperature(&trace.logits[off + k], s.tau).unwrap();
                let (lt, _) = mode_temp_log_prob_and_grad(&trace.controls[off + k], s.c, s.z, &g.mode).unwrap();
                n += 1;
                if p[s.y].ln().to_bits() != s.logp_token_old.to_bits() || lt.to_bits() != s.logp_temp_old.to_bits() {
                    mismatched += 1;
                }
            }
        }
    }
    let tc = TrainConfig::default();
    let mut dev: f64 = 0.0;
    for g in batch.iter_mut() {
        g.rewards.iter_mut().enumerate().for_each(|(i, r)| *r = (i % 2) as f64);
        attach_advantages(g, tc.adv_std_floor).unwrap();
        dev = dev
            .max(token_loss(&params, g, &tc).unwrap().max_ratio_dev)
            .max(temp_loss(&params, g, &tc).unwrap().max_ratio_dev);
    }
    outcome(
        mismatched == 0 && dev == 0.0,
        format!("{n} steps, {mismatched} log-prob mismatches, max |ratio-1| {dev:e}"),
    )
}

// ---------------------------------------------------------------- A7

fn a7_init() -> Outcome {
    let params = init_params(&ModelConfig::default(), 0).unwrap();
    let u = head_forward(&params.phi, &vec![0.0; params.config.d_model]);
    let gate = sigmoid(u.u_c);
    let (a, b) = (softplus(u.u_alpha) + EPS_STAB, softplus(u.u_beta) + EPS_STAB);
    outcome(
        (gate - 0.5).abs() < 1e-6 && (a - 1.0).abs() < 1e-3 && (b - 1.0).abs() < 1e-3,
        format!("P(c=1) {gate:.7}, Beta({a:.5}, {b:.5})"),
    )
}

// ---------------------------------------------------------------- A8-A10

fn desk_setup(mode: PolicyMode, seed: u64, n_updates: usize) -> TrainSetup {
    TrainSetup {
        train: TrainConfig {
            lr_token: LR_TOKEN,
            lr_temp: 50.0 * LR_TOKEN,
            batch_prompts: BATCH_PROMPTS,
            inner_epochs: INNER_EPOCHS,
            beta2: BETA2,
            ..Default::default()
        },
        model: ModelConfig {
            n_heads: N_HEADS,
            ..Default::default()
        },
        tasks: TaskMix::parse("mod_add:1").unwrap(),
        bounds: TempBounds::default(),
        mode,
        seed,
        n_updates,
        eval_every: n_updates,
        eval_k: 8,
        eval_instances: 100,
    }
}

const LR_TOKEN: f64 = 5e-4;
const BETA2: f64 = 0.9;
const BATCH_PROMPTS: usize = 128;
const INNER_EPOCHS: usize = 4;
const N_HEADS: usize = 4;

struct Run {
    reports: Vec<LossReport>,
    final_avg: f64,
    secs: f64,
    error: Option<String>,
}

fn run(mode: PolicyMode, seed: u64, n_updates: usize) -> Run {
    let t0 = Instant::now();
    let mut reports = Vec::new();
    let mut final_avg = f64::NAN;
    let res = train(desk_setup(mode, seed, n_updates), &mut |e| {
        match e {
            TrainEvent::Update { report, .. } => reports.push(report.clone()),
            TrainEvent::Eval(r) => final_avg = r.avg_at_k,
        }
        Ok(())
    });
    Run {
        reports,
        final_avg,
        secs: t0.elapsed().as_secs_f64(),
        error: res.err().map(|e| e.to_string()),
    }
}

fn mean_of(reports: &[LossReport], f: impl Fn(&LossReport) -> f64) -> f64 {
    reports.iter().map(f).sum::<f64>() / reports.len().max(1) as f64
}

fn tail(r: &Run) -> &[LossReport] {
    &r.reports[r.reports.len().saturating_sub(TAIL)..]
}

fn finite(r: &Run) -> bool {
    r.error.is_none()
        && r.reports.len() == N_UPDATES
        && r.reports
            .iter()
            .all(|x| x.token_loss.is_finite() && x.temp_loss.is_finite())
}

fn main() -> ExitCode {
    // `cargo test --test acceptance -- A1 A5` runs a subset.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| only.is_empty() || only.iter().any(|o| o == id);
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    // Seconds since the previous line; shared runs land on their first reader.
    let mut clock = Instant::now();
    let mut record = |id: &'static str, name: &str, f: &dyn Fn() -> Outcome| {
        if !wanted(id) {
            return;
        }
        let mut o = f();
        o.detail = format!("{} [{:.1}s]", o.detail, clock.elapsed().as_secs_f64());
        println!("{id} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, o));
        clock = Instant::now();
    };
    record("A1", "beta distribution", &a1_beta);
    record("A2", "gradient fidelity", &a2_gradients);
    record("A3", "advantage normalization", &a3_advantages);
    record("A4", "temperature softmax", &a4_softmax);
    record("A5", "carry-over structure", &a5_carry_over);
    record("A6", "on-policy identity", &a6_on_policy);
    record("A7", "head initialization", &a7_init);

    if ["A8", "A9", "A10"].iter().any(|id| wanted(id)) {
        let selective: Vec<Run> = SEEDS.iter().map(|&s| run(PolicyMode::Selective, s, N_UPDATES)).collect();
        record("A8", "learning smoke test", &|| {
            let mut pass = true;
            let mut parts = Vec::new();
            for (s, r) in SEEDS.iter().zip(&selective) {
                let reward = mean_of(tail(r), |x| x.mean_reward);
                pass &= finite(r) && reward >= 0.8 && r.secs < 900.0;
                parts.push(format!(
                    "seed {s}: reward {reward:.3} avg@8 {:.3} in {:.0}s{}",
                    r.final_avg,
                    r.secs,
                    r.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
                ));
            }
            outcome(pass, parts.join("; "))
        });

        let early = N_UPDATES / 4;
        if wanted("A9") {
            let fixed: Vec<Run> = SEEDS
                .iter()
                .map(|&s| run(PolicyMode::Fixed { tau: 1.0 }, s, early))
                .collect();
            record("A9", "entropy direction", &|| {
                let mut wins = 0;
                let mut parts = Vec::new();
                for ((s, sel), fix) in SEEDS.iter().zip(&selective).zip(&fixed) {
                    let hs = mean_of(&sel.reports[..early.min(sel.reports.len())], |x| x.mean_entropy);
                    let hf = mean_of(&fix.reports, |x| x.mean_entropy);
                    wins += (hs >= hf) as usize;
                    parts.push(format!("seed {s}: {hs:.3} vs {hf:.3}"));
                }
                outcome(wins >= 2, format!("{wins}/3 seeds; {}", parts.join("; ")))
            });
        }

        if wanted("A10") {
            let prompt_level = run(PolicyMode::PromptLevel, SEEDS[0], N_UPDATES);
            let always = run(PolicyMode::AlwaysUpdate, SEEDS[0], N_UPDATES);
            record("A10", "ablation modes", &|| {
                let sd_always = mean_of(tail(&always), |x| x.tau_std_within);
                let sd_sel = mean_of(tail(&selective[0]), |x| x.tau_std_within);
                outcome(
                    finite(&prompt_level) && finite(&always) && sd_always > sd_sel,
                    format!(
                        "finite prompt_level {} always_update {}; tau std within {sd_always:.4} vs selective {sd_sel:.4}",
                        finite(&prompt_level),
                        finite(&always)
                    ),
                )
            });
        }
    }

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
