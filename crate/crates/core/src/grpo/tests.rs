use super::*;
use crate::model::{init_params, Backbone, ModelConfig, ModelParams, ParamSet};
use crate::numkit::Rng;
use crate::rollout::{
    generate_group, mode_temp_log_prob_and_grad, token_log_prob, GroupRollout, PolicyMode, TempBounds, Trajectory,
    TrajectoryStep,
};
use crate::tasks::{mod_add_instance, TaskInstance, TaskKind, TaskMix, Token};

fn toy_cfg() -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        max_len: 16,
        backbone: Backbone::Transformer,
    }
}

fn perturbed(params: &ModelParams, scale: f64, seed: u64) -> ModelParams {
    let mut p = params.clone();
    let mut rng = Rng::new(seed);
    for (_, _, t) in p.tensors_mut() {
        t.data.iter_mut().for_each(|x| *x += scale * rng.normal());
    }
    p
}

/// Two hand-built trajectories over a 12-token vocabulary. Old log-probs
/// come from `old` so that ratios differ from 1.
fn toy_group(old: &ModelParams, mode: PolicyMode) -> GroupRollout {
    let instance = TaskInstance {
        kind: TaskKind::ModAdd,
        difficulty: 1,
        prompt: vec![1, 10, 5],
        gold: vec![6],
    };
    let raw: [&[(usize, bool, Option<f64>, f64)]; 2] = [
        &[(4, true, Some(0.3), 0.87), (9, false, None, 0.87), (2, true, Some(0.7), 1.23)],
        &[(7, false, None, 1.0), (11, true, Some(0.55), 1.095)],
    ];
    let mut trajectories = Vec::new();
    for steps in raw {
        let mut toks = instance.prompt.clone();
        toks.extend(steps[..steps.len() - 1].iter().map(|s| s.0));
        let tr = crate::model::forward(old, &toks).unwrap();
        let off = instance.prompt.len() - 1;
        let steps = steps
            .iter()
            .enumerate()
            .map(|(k, &(y, c, z, tau))| {
                let (c, z) = match mode {
                    PolicyMode::AlwaysUpdate => (true, Some(z.unwrap_or(0.4))),
                    _ => (c, z),
                };
                TrajectoryStep {
                    c,
                    z,
                    tau,
                    y,
                    logp_token_old: token_log_prob(&tr.logits[off + k], tau, y).unwrap(),
                    logp_temp_old: mode_temp_log_prob_and_grad(&tr.controls[off + k], c, z, &mode).unwrap().0,
                }
            })
            .collect::<Vec<_>>();
        trajectories.push(Trajectory {
            entropies: vec![1.0; steps.len()],
            steps,
            reward: 0.0,
        });
    }
    GroupRollout {
        instance,
        mode,
        bounds: TempBounds::default(),
        trajectories,
        rewards: vec![1.0, 0.0],
        advantages: Some(vec![0.8, -1.3]),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

fn fd_check(f: impl Fn(&ModelParams) -> Objective, mut params: ModelParams, set: ParamSet) {
    let grads = f(&params).grads;
    let h = 1e-5;
    let n_tensors = params.tensors().len();
    let mut checked = 0;
    for ti in 0..n_tensors {
        let (name, s, t) = {
            let v = params.tensors();
            (v[ti].0.clone(), v[ti].1, v[ti].2.len())
        };
        for i in 0..t {
            let ana = grads.tensors()[ti].2.data[i];
            if s != set {
                assert_eq!(ana, 0.0, "{name}[{i}] outside the updated set");
                continue;
            }
            let orig = params.tensors()[ti].2.data[i];
            params.tensors_mut()[ti].2.data[i] = orig + h;
            let vp = f(&params).value;
            params.tensors_mut()[ti].2.data[i] = orig - h;
            let vm = f(&params).value;
            params.tensors_mut()[ti].2.data[i] = orig;
            let num = (vp - vm) / (2.0 * h);
            assert!(rel_err(ana, num) < 1e-4, "{name}[{i}]: analytic {ana} numeric {num}");
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn advantage_examples() {
    let a = advantages(&[1.0, 1.0, 0.0, 0.0], 1e-8);
    for (x, e) in a.iter().zip([1.0, 1.0, -1.0, -1.0]) {
        assert!((x - e).abs() < 1e-6);
    }
    let a = advantages(&[1.0, 0.0, 0.0, 0.0], 1e-8);
    for (x, e) in a.iter().zip([1.7320, -0.5774, -0.5774, -0.5774]) {
        assert!((x - e).abs() < 1e-3);
    }
    assert!(advantages(&[1.0; 4], 1e-8).iter().all(|x| x.abs() < 1e-6));
}

#[test]
fn advantages_are_standardized() {
    let mut rng = Rng::new(3);
    for _ in 0..500 {
        let r: Vec<f64> = (0..8).map(|_| rng.uniform() * 3.0 - 1.0).collect();
        let a = advantages(&r, 1e-8);
        let mean = a.iter().sum::<f64>() / 8.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0).sqrt();
        let rm = r.iter().sum::<f64>() / 8.0;
        let rs = (r.iter().map(|x| (x - rm).powi(2)).sum::<f64>() / 8.0).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((std - rs / (rs + 1e-8)).abs() < 1e-6);
    }
}

#[test]
fn attach_rejects_singleton() {
    let p = init_params(&toy_cfg(), 0).unwrap();
    let mut g = toy_group(&p, PolicyMode::Selective);
    g.rewards.truncate(1);
    assert!(attach_advantages(&mut g, 1e-8).is_err());
}

#[test]
fn clipped_term_examples() {
    assert_eq!(clipped_term(1.0, 0.7, 0.2), 0.7);
    assert!((clipped_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
    assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
}

#[test]
fn clipped_term_is_pessimistic() {
    for i in 1..200 {
        let r = i as f64 * 0.015;
        for a in [-2.0, -0.3, 0.0, 0.4, 1.7] {
            assert!(clipped_term(r, a, 0.2) <= r * a + 1e-15);
        }
    }
}

#[test]
fn clipped_term_grad_matches_differences() {
    for (r, a) in [(1.1f64, 0.7), (0.9, -0.4), (1.3, 1.0), (0.7, -1.0), (0.7, 1.0), (1.3, -1.0)] {
        let h = 1e-6;
        let f = |lr: f64| clipped_term(lr.exp(), a, 0.2);
        let num = (f(r.ln() + h) - f(r.ln() - h)) / (2.0 * h);
        assert!((clipped_term_grad(r, a, 0.2) - num).abs() < 1e-6, "r {r} a {a}");
    }
}

#[test]
fn token_loss_gradient_matches_differences() {
    let cfg = toy_cfg();
    let old = perturbed(&init_params(&cfg, 5).unwrap(), 0.3, 11);
    let group = toy_group(&old, PolicyMode::Selective);
    let params = perturbed(&old, 0.02, 12);
    let tc = TrainConfig::default();
    let obj = token_loss(&params, &group, &tc).unwrap();
    assert!(obj.max_ratio_dev > 0.0);
    fd_check(|p| token_loss(p, &group, &tc).unwrap(), params, ParamSet::Theta);
}

#[test]
fn temp_loss_gradient_matches_differences() {
    let cfg = toy_cfg();
    let old = perturbed(&init_params(&cfg, 6).unwrap(), 0.3, 21);
    let tc = TrainConfig::default();
    for mode in [PolicyMode::Selective, PolicyMode::AlwaysUpdate, PolicyMode::PromptLevel] {
        let group = toy_group(&old, mode);
        let params = perturbed(&old, 0.02, 22);
        fd_check(|p| temp_loss(p, &group, &tc).unwrap(), params, ParamSet::Phi);
    }
}

#[test]
fn gradient_checks_on_gru_backbone() {
    let cfg = ModelConfig {
        backbone: Backbone::Gru,
        ..toy_cfg()
    };
    let old = perturbed(&init_params(&cfg, 8).unwrap(), 0.3, 31);
    let group = toy_group(&old, PolicyMode::Selective);
    let params = perturbed(&old, 0.02, 32);
    let tc = TrainConfig::default();
    fd_check(|p| token_loss(p, &group, &tc).unwrap(), params.clone(), ParamSet::Theta);
    fd_check(|p| temp_loss(p, &group, &tc).unwrap(), params, ParamSet::Phi);
}

fn real_batch(params: &ModelParams, mode: PolicyMode, seed: u64) -> Vec<GroupRollout> {
    let rng = Rng::new(seed);
    let mix = TaskMix::single(TaskKind::ModAdd, 1);
    let mut trng = rng.split(0);
    (0..4)
        .map(|j| {
            let inst = mix.sample(&mut trng).unwrap();
            let mut g = generate_group(params, &inst, 4, &TempBounds::default(), &mode, &rng.split(1 + j)).unwrap();
            attach_advantages(&mut g, 1e-8).unwrap();
            g
        })
        .collect()
}

fn small_params() -> ModelParams {
    let cfg = ModelConfig {
        max_len: 16,
        ..ModelConfig::default()
    };
    init_params(&cfg, 2).unwrap()
}

#[test]
fn on_policy_objective_is_advantage_weighted_mean() {
    let params = small_params();
    let batch = real_batch(&params, PolicyMode::Selective, 1);
    let tc = TrainConfig::default();
    for obj in [
        token_objective(&params, &batch, &tc).unwrap(),
        temp_objective(&params, &batch, &tc).unwrap(),
    ] {
        assert_eq!(obj.max_ratio_dev, 0.0);
        assert_eq!(obj.clip_frac, 0.0);
        let (mut num, mut den) = (0.0, 0.0);
        for g in &batch {
            for (t, a) in g.trajectories.iter().zip(g.advantages.as_ref().unwrap()) {
                num += a * t.steps.len() as f64;
                den += t.steps.len() as f64;
            }
        }
        assert!((obj.value - num / den).abs() < 1e-12);
    }
}

#[test]
fn zero_advantages_give_zero_gradients() {
    let cfg = toy_cfg();
    let p = init_params(&cfg, 3).unwrap();
    let mut g = toy_group(&p, PolicyMode::Selective);
    g.advantages = Some(vec![0.0, 0.0]);
    let tc = TrainConfig::default();
    for obj in [token_loss(&p, &g, &tc).unwrap(), temp_loss(&p, &g, &tc).unwrap()] {
        assert!(obj.grads.tensors().iter().all(|(_, _, t)| t.data.iter().all(|&x| x == 0.0)));
    }
}

#[test]
fn gate_off_steps_only_reach_gate_row() {
    let cfg = toy_cfg();
    let p = perturbed(&init_params(&cfg, 4).unwrap(), 0.2, 41);
    let mut g = toy_group(&p, PolicyMode::Selective);
    for t in &mut g.trajectories {
        for s in &mut t.steps {
            s.c = false;
            s.z = None;
        }
    }
    let obj = temp_loss(&p, &g, &TrainConfig::default()).unwrap();
    let w2 = obj.grads.tensor("head.w2").unwrap();
    let b2 = obj.grads.tensor("head.b2").unwrap();
    assert!(w2.row(0).iter().any(|&x| x != 0.0));
    assert!(w2.row(1).iter().chain(w2.row(2)).all(|&x| x == 0.0));
    assert_eq!((b2.data[1], b2.data[2]), (0.0, 0.0));
    assert!(b2.data[0] != 0.0);
}

#[test]
fn baseline_modes_leave_head_untouched() {
    let params = small_params();
    for mode in [PolicyMode::Fixed { tau: 1.0 }, PolicyMode::from_name("annealed", 1.0).unwrap()] {
        let batch = real_batch(&params, mode, 2);
        let obj = temp_objective(&params, &batch, &TrainConfig::default()).unwrap();
        assert_eq!(obj.grads.norm(ParamSet::Phi), 0.0);
        let r = LossReport::from_rollouts(0, &batch);
        assert_eq!(r.frac_c1, 0.0);
    }
}

fn bytes(p: &ModelParams, set: ParamSet) -> Vec<u64> {
    p.tensors()
        .into_iter()
        .filter(|(_, s, _)| *s == set)
        .flat_map(|(_, _, t)| t.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn sub_steps_touch_disjoint_sets() {
    let mut params = small_params();
    let batch = real_batch(&params, PolicyMode::Selective, 3);
    let tc = TrainConfig {
        lr_token: 1e-2,
        lr_temp: 1e-2,
        weight_decay: 0.1,
        ..Default::default()
    };
    let mut opt = CoordinateOptimizer::new(&tc);
    let (theta0, phi0) = (bytes(&params, ParamSet::Theta), bytes(&params, ParamSet::Phi));
    let g = token_objective(&params, &batch, &tc).unwrap().grads;
    opt.theta.ascend(&mut params, &g);
    assert_eq!(bytes(&params, ParamSet::Phi), phi0);
    assert_ne!(bytes(&params, ParamSet::Theta), theta0);
    let theta1 = bytes(&params, ParamSet::Theta);
    let g = temp_objective(&params, &batch, &tc).unwrap().grads;
    opt.phi.ascend(&mut params, &g);
    assert_eq!(bytes(&params, ParamSet::Theta), theta1);
    assert_ne!(bytes(&params, ParamSet::Phi), phi0);
}

#[test]
fn zero_advantage_batch_leaves_params_unchanged() {
    let mut params = small_params();
    let mut batch = real_batch(&params, PolicyMode::Selective, 4);
    for g in &mut batch {
        let n = g.trajectories.len();
        g.advantages = Some(vec![0.0; n]);
    }
    let before = params.clone();
    let tc = TrainConfig::default();
    let mut opt = CoordinateOptimizer::new(&tc);
    coordinate_step(&mut params, &mut opt, &batch, &tc, 0).unwrap();
    assert_eq!(params, before);

    let tc = TrainConfig {
        weight_decay: 0.5,
        ..tc
    };
    let mut opt = CoordinateOptimizer::new(&tc);
    coordinate_step(&mut params, &mut opt, &batch, &tc, 0).unwrap();
    for ((_, s, a), (_, _, b)) in params.tensors().into_iter().zip(before.tensors()) {
        let lr = if s == ParamSet::Theta { tc.lr_token } else { tc.lr_temp };
        let keep = if a.shape.len() >= 2 { 1.0 - lr * 0.5 } else { 1.0 };
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y * keep).abs() < 1e-15);
        }
    }
}

#[test]
fn second_inner_epoch_exercises_clipping() {
    let mut params = small_params();
    let mut batch = real_batch(&params, PolicyMode::Selective, 5);
    for g in &mut batch {
        g.advantages = Some(vec![1.0, -1.0, 1.0, -1.0]);
    }
    let tc = TrainConfig {
        lr_token: 0.05,
        lr_temp: 0.05,
        ..Default::default()
    };
    let mut opt = CoordinateOptimizer::new(&tc);
    let g = token_objective(&params, &batch, &tc).unwrap().grads;
    opt.theta.ascend(&mut params, &g);
    let again = token_objective(&params, &batch, &tc).unwrap();
    assert!(again.max_ratio_dev > tc.clip_eps);
    assert!(again.clip_frac > 0.0);

    let mut params = small_params();
    let tc = TrainConfig {
        inner_epochs: 2,
        ..tc
    };
    let mut opt = CoordinateOptimizer::new(&tc);
    let r = coordinate_step(&mut params, &mut opt, &batch, &tc, 0).unwrap();
    assert!(r.is_finite());
    assert_eq!(opt.theta.steps_taken(), 2);
    assert_eq!(opt.phi.steps_taken(), 2);
}

#[test]
fn non_finite_objective_aborts() {
    let mut params = small_params();
    let mut batch = real_batch(&params, PolicyMode::Selective, 6);
    batch[0].advantages = Some(vec![f64::NAN; 4]);
    let tc = TrainConfig::default();
    let mut opt = CoordinateOptimizer::new(&tc);
    match coordinate_step(&mut params, &mut opt, &batch, &tc, 7) {
        Err(crate::Error::Abort { update, report, .. }) => {
            assert_eq!(update, 7);
            assert_eq!(report.update, 7);
        }
        other => panic!("expected abort, got {:?}", other.map(|_| ())),
    }
}

fn tiny_setup(mode: PolicyMode, n_updates: usize) -> TrainSetup {
    TrainSetup {
        train: TrainConfig {
            lr_token: 1e-3,
            lr_temp: 5e-2,
            batch_prompts: 4,
            group_size: 4,
            ..Default::default()
        },
        model: ModelConfig {
            max_len: 20,
            ..ModelConfig::default()
        },
        tasks: TaskMix::single(TaskKind::ModAdd, 1),
        bounds: TempBounds::default(),
        mode,
        seed: 9,
        n_updates,
        eval_every: 2,
        eval_k: 2,
        eval_instances: 3,
    }
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut rows = Vec::new();
        let out = train(tiny_setup(PolicyMode::Selective, 3), &mut |e| {
            if let TrainEvent::Update { report, .. } = e {
                rows.push(report.clone());
            }
            Ok(())
        })
        .unwrap();
        (rows, out.params, out.evals)
    };
    let (a, pa, ea) = run();
    let (b, pb, eb) = run();
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_eq!(ea, eb);
    assert_eq!(ea.iter().map(|e| e.update).collect::<Vec<_>>(), vec![2, 3]);
}

#[test]
fn zero_updates_return_init() {
    let setup = tiny_setup(PolicyMode::Selective, 0);
    let init = Trainer::new(setup.clone()).unwrap().params;
    let mut events = 0;
    let out = train(setup, &mut |_| {
        events += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(events, 0);
    assert!(out.reports.is_empty());
    assert_eq!(out.params, init);
}

#[test]
fn fixed_mode_reports_no_gate() {
    let out = train(tiny_setup(PolicyMode::Fixed { tau: 1.0 }, 2), &mut |_| Ok(())).unwrap();
    for r in &out.reports {
        assert_eq!(r.frac_c1, 0.0);
        assert_eq!(r.mean_tau, 1.0);
        assert_eq!(r.grad_norm_phi, 0.0);
    }
}

#[test]
fn annealed_mode_decays_over_training() {
    let mut t = Trainer::new(tiny_setup(PolicyMode::from_name("annealed", 1.0).unwrap(), 4)).unwrap();
    t.step().unwrap();
    t.step().unwrap();
    let PolicyMode::Annealed(s) = t.current_mode() else { unreachable!() };
    assert!(s.gamma < 1.0 && s.gamma > 0.0);
}

#[test]
fn sink_errors_propagate() {
    let r = train(tiny_setup(PolicyMode::Selective, 2), &mut |_| {
        Err(crate::Error::InvalidArgument("stop".into()))
    });
    assert!(r.is_err());
}

struct Oracle;

impl GroupSampler for Oracle {
    fn sample_group(&self, inst: &TaskInstance, k: usize, _: &Rng) -> crate::Result<Vec<Trajectory>> {
        let mut ys = inst.gold.clone();
        ys.push(Token::Eoa.id());
        let steps: Vec<TrajectoryStep> = ys
            .into_iter()
            .map(|y| TrajectoryStep {
                c: false,
                z: None,
                tau: 0.9,
                y,
                logp_token_old: 0.0,
                logp_temp_old: 0.0,
            })
            .collect();
        Ok(vec![
            Trajectory {
                entropies: vec![0.0; steps.len()],
                steps,
                reward: 1.0,
            };
            k
        ])
    }
}

#[test]
fn eval_metrics() {
    let insts: Vec<_> = (0..6).map(|i| mod_add_instance(1, i, 3, 10)).collect();
    let r = evaluate(&Oracle, &insts, 4, &Rng::new(0)).unwrap();
    assert_eq!((r.avg_at_k, r.pass_at_k), (1.0, 1.0));
    assert_eq!(r.per_difficulty[&1].n_instances, 6);
    assert!((r.per_difficulty[&1].mean_tau - 0.9).abs() < 1e-12);
    let row = r.csv_row();
    assert_eq!(row.len(), EvalReport::csv_header().len());
    assert_eq!(row[4], "");

    let params = small_params();
    let s = PolicySampler {
        params: &params,
        bounds: TempBounds::default(),
        mode: PolicyMode::Selective,
    };
    let r1 = evaluate(&s, &insts, 1, &Rng::new(1)).unwrap();
    assert_eq!(r1.avg_at_k, r1.pass_at_k);
    let r8 = evaluate(&s, &insts, 8, &Rng::new(1)).unwrap();
    assert!(r8.pass_at_k >= r8.avg_at_k);
    assert!(evaluate(&s, &insts, 0, &Rng::new(1)).is_err());
}
