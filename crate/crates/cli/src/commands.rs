use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use introspect::grpo::{evaluate, read_metrics_csv, EvalReport, LossReport, PolicySampler, Trainer};
use introspect::model::{Checkpoint, ModelParams};
use introspect::numkit::Rng;
use introspect::rollout::{dump_trajectories, generate_from_prompt, prompt_trace, PolicyMode, TempBounds};
use introspect::tasks::{TaskInstance, TaskMix, Token, Vocab};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.json";
pub const LOG_FILE: &str = "train.log";

// Root-seed substreams used outside the trainer.
const STREAM_EVAL: u64 = 2;
const STREAM_EVAL_SET: u64 = 3;
const STREAM_TRACE: u64 = 4;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        k => CliError::Usage(format!("{}: {k:?}", path.display())),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(CliError::io(path))
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn save_checkpoint(path: &Path, params: &ModelParams, cfg: &RunConfig, mode: &PolicyMode, update: usize) -> Result<()> {
    let mut ck = Checkpoint::from_params(params);
    let meta = [
        ("mode", serde_json::to_value(mode)),
        ("bounds", serde_json::to_value(cfg.bounds())),
        ("tasks", serde_json::to_value(&cfg.tasks)),
        ("seed", serde_json::to_value(cfg.seed)),
        ("update", serde_json::to_value(update)),
    ];
    for (k, v) in meta {
        ck.metadata.insert(k.to_string(), v.expect("serializable"));
    }
    write_json(path, &ck)
}

/// Runs training into `cfg.out`. A non-finite update writes `abort.json`
/// next to the metrics and returns the abort error.
pub fn train(cfg: &RunConfig) -> Result<()> {
    let setup = cfg.setup()?;
    let out = &cfg.out;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let metrics_path = out.join(METRICS_FILE);
    let eval_path = out.join(EVAL_FILE);
    let mut metrics = csv_writer(&metrics_path)?;
    metrics
        .write_record(LossReport::CSV_HEADER)
        .map_err(csv_err(&metrics_path))?;
    let mut evals = csv_writer(&eval_path)?;
    evals
        .write_record(EvalReport::csv_header())
        .map_err(csv_err(&eval_path))?;
    metrics.flush().map_err(CliError::io(&metrics_path))?;
    evals.flush().map_err(CliError::io(&eval_path))?;
    let log_path = out.join(LOG_FILE);
    let mut log = create(&log_path)?;
    let mut logln = |msg: String| writeln!(log, "{} {msg}", unix_time()).and_then(|_| log.flush());
    logln(format!("start seed={} mode={}", cfg.seed, cfg.mode.as_str())).map_err(CliError::io(&log_path))?;

    let n = setup.n_updates;
    let eval_every = setup.eval_every;
    let mut trainer = Trainer::new(setup)?;
    let mut last_batch = Vec::new();
    for u in 0..n {
        let (report, batch) = match trainer.step() {
            Ok(r) => r,
            Err(e @ introspect::Error::Abort { .. }) => {
                if let introspect::Error::Abort { report, reason, .. } = &e {
                    let diag = serde_json::json!({ "reason": reason, "report": report });
                    write_json(&out.join("abort.json"), &diag)?;
                }
                logln(format!("abort at update {u}")).map_err(CliError::io(&log_path))?;
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        metrics.write_record(report.csv_row()).map_err(csv_err(&metrics_path))?;
        metrics.flush().map_err(CliError::io(&metrics_path))?;
        let done = u + 1;
        if (eval_every > 0 && done % eval_every == 0) || done == n {
            let e = trainer.evaluate()?;
            evals.write_record(e.csv_row()).map_err(csv_err(&eval_path))?;
            evals.flush().map_err(CliError::io(&eval_path))?;
            logln(format!("update {done} avg@{}={:.4} pass@{}={:.4}", e.k, e.avg_at_k, e.k, e.pass_at_k))
                .map_err(CliError::io(&log_path))?;
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != n {
            let path = out.join(format!("checkpoint_{done:06}.json"));
            save_checkpoint(&path, &trainer.params, cfg, &trainer.current_mode(), done)?;
        }
        last_batch = batch;
    }
    save_checkpoint(&out.join(FINAL_CHECKPOINT), &trainer.params, cfg, &trainer.current_mode(), n)?;
    let traj_path = out.join(TRAJECTORIES_FILE);
    let mut w = create(&traj_path)?;
    dump_trajectories(&mut w, &last_batch)?;
    w.flush().map_err(CliError::io(&traj_path))?;
    logln("done".into()).map_err(CliError::io(&log_path))?;
    Ok(())
}

/// Model plus the policy settings recorded when it was saved.
pub struct LoadedPolicy {
    pub params: ModelParams,
    pub mode: PolicyMode,
    pub bounds: TempBounds,
    pub tasks: Option<String>,
}

pub fn load_policy(path: &Path) -> Result<LoadedPolicy> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let ck = Checkpoint::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if ck.config.vocab_size != Vocab::SIZE {
        return Err(CliError::Usage(format!(
            "{}: vocabulary size {} does not match the task vocabulary ({})",
            path.display(),
            ck.config.vocab_size,
            Vocab::SIZE
        )));
    }
    let params = ck
        .to_params()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let field = |k: &str| ck.metadata.get(k).cloned().unwrap_or(Value::Null);
    let mode = match field("mode") {
        Value::Null => PolicyMode::Selective,
        v => serde_json::from_value(v).map_err(|e| CliError::Usage(format!("{}: mode: {e}", path.display())))?,
    };
    let bounds = match field("bounds") {
        Value::Null => TempBounds::default(),
        v => serde_json::from_value(v).map_err(|e| CliError::Usage(format!("{}: bounds: {e}", path.display())))?,
    };
    bounds.validate()?;
    let tasks = field("tasks").as_str().map(str::to_string);
    Ok(LoadedPolicy {
        params,
        mode,
        bounds,
        tasks,
    })
}

fn check_fits(params: &ModelParams, instances: &[TaskInstance]) -> Result<()> {
    let longest = instances.iter().map(|i| i.prompt.len()).max().unwrap_or(0);
    if longest >= params.config.max_len {
        return Err(CliError::Usage(format!(
            "checkpoint max_len {} cannot hold prompts of length {longest}",
            params.config.max_len
        )));
    }
    Ok(())
}

pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub tasks: Option<String>,
    pub mode: Option<PolicyMode>,
    pub k: usize,
    pub instances: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn eval(opts: &EvalOptions) -> Result<EvalReport> {
    let policy = load_policy(&opts.checkpoint)?;
    let tasks = opts
        .tasks
        .clone()
        .or(policy.tasks.clone())
        .unwrap_or_else(|| "mod_add:1".into());
    let mix = TaskMix::parse(&tasks)?;
    let root = Rng::new(opts.seed);
    let mut set_rng = root.split(STREAM_EVAL_SET);
    let instances = (0..opts.instances)
        .map(|_| mix.sample(&mut set_rng))
        .collect::<introspect::Result<Vec<_>>>()?;
    check_fits(&policy.params, &instances)?;
    if opts.k == 0 {
        return Err(CliError::Usage("k must be positive".into()));
    }
    let sampler = PolicySampler {
        params: &policy.params,
        bounds: policy.bounds,
        mode: opts.mode.unwrap_or(policy.mode),
    };
    let report = evaluate(&sampler, &instances, opts.k, &root.split(STREAM_EVAL))?;
    let rows = eval_rows(&report);
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{:<10} {:>5} {:>10} {:>10} {:>9}", "difficulty", "n", format!("avg@{}", opts.k), format!("pass@{}", opts.k), "mean_tau");
    for r in &rows {
        let _ = writeln!(stdout, "{:<10} {:>5} {:>10.4} {:>10.4} {:>9.4}", r[0], r[1], r[2].parse::<f64>().unwrap_or(f64::NAN), r[3].parse::<f64>().unwrap_or(f64::NAN), r[4].parse::<f64>().unwrap_or(f64::NAN));
    }
    if let Some(path) = &opts.out {
        let mut w = csv_writer(path)?;
        w.write_record(["difficulty", "n_instances", "avg_at_k", "pass_at_k", "mean_tau", "k"])
            .map_err(csv_err(path))?;
        for mut r in rows {
            r.push(opts.k.to_string());
            w.write_record(r).map_err(csv_err(path))?;
        }
        w.flush().map_err(CliError::io(path))?;
    }
    Ok(report)
}

/// Per-difficulty rows followed by an `all` row.
fn eval_rows(r: &EvalReport) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = r
        .per_difficulty
        .iter()
        .map(|(d, s)| {
            vec![
                d.to_string(),
                s.n_instances.to_string(),
                s.avg_at_k.to_string(),
                s.pass_at_k.to_string(),
                s.mean_tau.to_string(),
            ]
        })
        .collect();
    let n: usize = r.per_difficulty.values().map(|s| s.n_instances).sum();
    let tau = if n > 0 {
        r.per_difficulty
            .values()
            .map(|s| s.mean_tau * s.n_instances as f64)
            .sum::<f64>()
            / n as f64
    } else {
        0.0
    };
    rows.push(vec![
        "all".into(),
        n.to_string(),
        r.avg_at_k.to_string(),
        r.pass_at_k.to_string(),
        tau.to_string(),
    ]);
    rows
}

#[derive(Debug, Serialize)]
pub struct TraceRow {
    pub sample: usize,
    pub position: usize,
    pub token: String,
    pub tau: f64,
    pub c: bool,
    pub entropy_at_step: f64,
}

pub struct TraceOptions {
    pub checkpoint: PathBuf,
    pub task: Option<String>,
    pub prompt: Option<String>,
    pub mode: Option<PolicyMode>,
    pub samples: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn trace(opts: &TraceOptions) -> Result<Vec<TraceRow>> {
    let policy = load_policy(&opts.checkpoint)?;
    let mode = opts.mode.unwrap_or(policy.mode);
    let root = Rng::new(opts.seed).split(STREAM_TRACE);
    let instance = match &opts.prompt {
        Some(p) => {
            let prompt = Vocab::encode(p).map_err(|e| CliError::Usage(e.to_string()))?;
            if prompt.first() != Some(&Token::Bos.id()) {
                return Err(CliError::Usage("prompt must start with <bos>".into()));
            }
            TaskInstance {
                kind: introspect::tasks::TaskKind::ModAdd,
                difficulty: 1,
                prompt,
                gold: Vec::new(),
            }
        }
        None => {
            let task = opts.task.clone().or(policy.tasks.clone()).unwrap_or_else(|| "mod_add:1".into());
            TaskMix::parse(&task)?.sample(&mut root.split(0))?
        }
    };
    check_fits(&policy.params, std::slice::from_ref(&instance))?;
    let base = prompt_trace(&policy.params, &instance)?;
    let mut rows = Vec::new();
    for s in 0..opts.samples {
        let mut rng = root.split(1 + s as u64);
        let traj = generate_from_prompt(&policy.params, base.clone(), &policy.bounds, &mode, &mut rng)?;
        for (i, (st, h)) in traj.steps.iter().zip(&traj.entropies).enumerate() {
            rows.push(TraceRow {
                sample: s,
                position: i,
                token: Vocab::render(&[st.y]),
                tau: st.tau,
                c: st.c,
                entropy_at_step: *h,
            });
        }
    }
    let mut text = String::new();
    for r in &rows {
        text.push_str(&serde_json::to_string(r).expect("serializable"));
        text.push('\n');
    }
    match &opts.out {
        Some(path) => fs::write(path, text).map_err(CliError::io(path))?,
        None => {
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
        }
    }
    Ok(rows)
}

/// Columns contributed by each run in a comparison.
pub const COMPARE_COLUMNS: [&str; 3] = ["mean_entropy", "mean_reward", "mean_tau"];

fn labels(dirs: &[PathBuf]) -> Vec<String> {
    let base: Vec<String> = dirs
        .iter()
        .map(|d| {
            d.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| d.display().to_string())
        })
        .collect();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    base.iter()
        .map(|b| {
            let n = seen.entry(b).or_insert(0);
            *n += 1;
            if *n == 1 {
                b.clone()
            } else {
                format!("{b}_{n}")
            }
        })
        .collect()
}

/// Joins the metrics of several runs on their common update indices.
/// Returns a warning when run lengths differ.
pub fn compare(dirs: &[PathBuf], out: Option<&Path>) -> Result<Option<String>> {
    if dirs.is_empty() {
        return Err(CliError::Usage("compare needs at least one run directory".into()));
    }
    let mut runs = Vec::new();
    let mut bad = Vec::new();
    for d in dirs {
        let path = d.join(METRICS_FILE);
        match File::open(&path).map_err(introspect::Error::from).and_then(read_metrics_csv) {
            Ok(rows) => runs.push(rows),
            Err(e) => bad.push(format!("{}: {e}", path.display())),
        }
    }
    if !bad.is_empty() {
        return Err(CliError::Usage(format!("unreadable metrics:\n  {}", bad.join("\n  "))));
    }
    let lens: Vec<usize> = runs.iter().map(Vec::len).collect();
    let n = *lens.iter().min().expect("nonempty");
    let warning = (lens.iter().any(|&l| l != n))
        .then(|| format!("runs have different lengths {lens:?}; joined on the first {n} updates"));
    let mut header = vec!["update".to_string()];
    for l in labels(dirs) {
        header.extend(COMPARE_COLUMNS.iter().map(|c| format!("{l}.{c}")));
    }
    let mut table = vec![header];
    for i in 0..n {
        let update = runs[0][i].update;
        if let Some(r) = runs.iter().find(|r| r[i].update != update) {
            return Err(CliError::Usage(format!(
                "update index mismatch at row {}: {} vs {update}",
                i + 1,
                r[i].update
            )));
        }
        let mut row = vec![update.to_string()];
        for r in &runs {
            row.extend([r[i].mean_entropy, r[i].mean_reward, r[i].mean_tau].map(|x| x.to_string()));
        }
        table.push(row);
    }
    match out {
        Some(path) => {
            let mut w = csv_writer(path)?;
            for row in &table {
                w.write_record(row).map_err(csv_err(path))?;
            }
            w.flush().map_err(CliError::io(path))?;
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            for row in &table {
                let _ = w.write_record(row);
            }
            let _ = w.flush();
        }
    }
    Ok(warning)
}
