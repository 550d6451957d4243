//! Stage orchestration behind the `advbid` binary: dataset generation, oracle
//! solving, training, evaluation and reporting, with manifests and resumable
//! checkpoints.
//!
//! ```text
//! <out>/dataset/                      day files, config.toml, manifest.json
//! <out>/experts/                      experts.json, config.toml, manifest.json
//! <out>/train/<algo>-seed<n>/         agent.json, world.ckpt, policy.ckpt,
//!                                     metrics.jsonl, resume.json, config.toml, manifest.json
//! <out>/eval/<algo>-seed<n>-<split>/  scores.json, episodes.jsonl, config.toml, manifest.json
//! <out>/report/                       report.json, report.csv, manifest.json
//! ```
//!
//! A stage without an explicit config reuses the resolved config stored by
//! the stage it reads from.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{CemConfig, CemState, PidConfig};
use crate::env::EpisodeRecord;
use crate::error::{Error, Result};
use crate::expert::{solve_day, DayExpert, ExpertConfig};
use crate::market::io::{load_dataset, save_dataset, DayFormat};
use crate::market::{generate_dataset, EnvironmentDay, GeneratorConfig, Split};
use crate::metrics::{aggregate_report, report_csv, DayScore, MetricsReport, RunScores};
use crate::policy::{Policy, PolicyConfig};
use crate::train::{
    baseline_agent, evaluate, initial_world, pretrain_world, run_scores, world_pool, Agent, Algo, Learner, ResumeState, TrainConfig, TrainingSet,
};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";

/// Every module config in one document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_format: DayFormat,
    pub generator: GeneratorConfig,
    pub expert: ExpertConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.train.metrics.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub code_version: String,
    /// Upstream artifact name to content hash.
    pub inputs: BTreeMap<String, String>,
    /// File name to content hash.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST))
    }

    /// Combined hash of all outputs, used as the input hash downstream.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, hash) in &self.outputs {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(hash.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Hash the listed files of `dir` and write the manifest.
fn finish_stage(dir: &Path, stage: &str, cfg_hash: &str, inputs: BTreeMap<String, String>, files: &[String], labels: BTreeMap<String, String>) -> Result<Manifest> {
    let mut outputs = BTreeMap::new();
    for f in files {
        outputs.insert(f.clone(), file_hash(&dir.join(f))?);
    }
    let m = Manifest { stage: stage.into(), config_hash: cfg_hash.into(), code_version: CODE_VERSION.into(), inputs, outputs, labels };
    write_json(&dir.join(MANIFEST), &m)?;
    Ok(m)
}

/// Manifest of an upstream stage, or a dependency error naming it.
fn upstream(dir: &Path, stage: &str) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::Dependency(format!("no {stage} artifacts in {} (run `{stage}` first)", dir.display())));
    }
    let m = Manifest::load(dir)?;
    if m.stage != stage {
        return Err(Error::Dependency(format!("{} holds `{}` artifacts, expected `{stage}`", dir.display(), m.stage)));
    }
    Ok(m)
}

/// Explicit config, else the one stored next to upstream artifacts, else defaults.
pub fn resolve_config(explicit: Option<&Path>, upstream_dir: Option<&Path>) -> Result<RunConfig> {
    if let Some(p) = explicit {
        return RunConfig::load(p);
    }
    if let Some(dir) = upstream_dir {
        let p = dir.join(CONFIG);
        if p.exists() {
            return RunConfig::load(&p);
        }
    }
    Ok(RunConfig::default())
}

fn save_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(&dir.join(CONFIG), cfg.to_toml().as_bytes())
}

/// Conventional directory layout under an output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn experts(&self) -> PathBuf {
        self.root.join("experts")
    }

    pub fn run(&self, algo: Algo, seed: u64) -> PathBuf {
        self.root.join("train").join(format!("{algo}-seed{seed}"))
    }

    pub fn eval(&self, algo: Algo, seed: u64, split: &str) -> PathBuf {
        self.root.join("eval").join(format!("{algo}-seed{seed}-{split}"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub fn gen_stage(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let days = generate_dataset(&cfg.generator)?;
    create_dir(out)?;
    let paths = save_dataset(out, &days, cfg.dataset_format)?;
    save_config(out, cfg)?;
    let mut files: Vec<String> = paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    files.push(CONFIG.into());
    let labels = BTreeMap::from([("days".to_string(), days.len().to_string())]);
    finish_stage(out, "gen", &cfg.hash(), BTreeMap::new(), &files, labels)
}

pub fn load_days(dataset: &Path) -> Result<(Vec<EnvironmentDay>, Manifest)> {
    let m = upstream(dataset, "gen")?;
    Ok((load_dataset(dataset)?, m))
}

/// Solve every day, spreading days over `workers` threads. The result does
/// not depend on the worker count.
pub fn solve_days(days: &[EnvironmentDay], cfg: &ExpertConfig, workers: usize) -> Result<Vec<DayExpert>> {
    let workers = workers.clamp(1, days.len().max(1));
    let chunk = days.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<DayExpert>>> = std::thread::scope(|s| {
        let handles: Vec<_> = days.chunks(chunk).map(|c| s.spawn(move || c.iter().map(|d| solve_day(d, cfg)).collect())).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Runtime("expert worker panicked".into())))).collect()
    });
    let mut out = Vec::with_capacity(days.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn expert_stage(cfg: &RunConfig, dataset: &Path, out: &Path, workers: usize) -> Result<Manifest> {
    cfg.validate()?;
    let (days, dm) = load_days(dataset)?;
    let experts = solve_days(&days, &cfg.expert, workers)?;
    create_dir(out)?;
    write_json(&out.join("experts.json"), &experts)?;
    save_config(out, cfg)?;
    let flagged = experts.iter().filter(|e| e.flagged).count();
    let labels = BTreeMap::from([("days".to_string(), experts.len().to_string()), ("flagged".to_string(), flagged.to_string())]);
    finish_stage(out, "expert", &cfg.hash(), BTreeMap::from([("dataset".into(), dm.digest())]), &["experts.json".into(), CONFIG.into()], labels)
}

pub fn load_experts(dir: &Path) -> Result<(Vec<DayExpert>, Manifest)> {
    let m = upstream(dir, "expert")?;
    Ok((read_json(&dir.join("experts.json"))?, m))
}

/// Serialized description of a trained agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgentSpec {
    /// Parameters live in `world.ckpt` and `policy.ckpt`.
    Policy { policy: PolicyConfig, init_log_ratio: f64 },
    Pid { pid: PidConfig },
    Cem { cem: CemConfig, init: CemState, history: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentFile {
    pub algo: Algo,
    pub seed: u64,
    pub rounds: usize,
    pub agent: AgentSpec,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub algo: Algo,
    pub seed: u64,
    pub dataset: PathBuf,
    pub experts: PathBuf,
    pub out: PathBuf,
    /// Continue from `resume.json` in `out` when present.
    pub resume: bool,
}

/// Train one (algorithm, seed) pair. Learned algorithms write a checkpoint
/// every `checkpoint_every` rounds; with `resume` the run continues from the
/// last one and the metrics stream is cut back to it.
pub fn train_stage(cfg: &RunConfig, opts: &TrainOptions) -> Result<Manifest> {
    cfg.validate()?;
    let (days, dm) = load_days(&opts.dataset)?;
    let (experts, em) = load_experts(&opts.experts)?;
    let train_days: Vec<&EnvironmentDay> = days.iter().filter(|d| d.split == Split::Train).collect();
    let data = TrainingSet::new(train_days, &experts)?;
    let out = &opts.out;
    create_dir(out)?;
    save_config(out, cfg)?;
    let tc = &cfg.train;
    let mut files = vec![CONFIG.to_string(), "agent.json".to_string(), "metrics.jsonl".to_string()];
    let (agent, rounds) = if opts.algo.is_learned() {
        let resume_path = out.join("resume.json");
        let mut learner = if opts.resume && resume_path.exists() {
            let st: ResumeState = read_json(&resume_path)?;
            let mut l = Learner::new(opts.algo, opts.seed, tc.clone(), &data, initial_world(tc, opts.seed), world_pool(tc, &data, opts.seed)?)?;
            l.restore(&st)?;
            l
        } else {
            let (world, pool, _) = pretrain_world(tc, &data, opts.seed)?;
            Learner::new(opts.algo, opts.seed, tc.clone(), &data, world, pool)?
        };
        let metrics_path = out.join("metrics.jsonl");
        let mut lines: Vec<String> = if learner.next_round > 0 {
            let text = fs::read_to_string(&metrics_path).unwrap_or_default();
            text.lines().take(learner.next_round).map(String::from).collect()
        } else {
            Vec::new()
        };
        if lines.len() != learner.next_round {
            return Err(Error::Format { path: metrics_path, message: format!("expected {} metric records before resuming", learner.next_round) });
        }
        let mut text = lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        write_file(&metrics_path, text.as_bytes())?;
        let mut sink = fs::OpenOptions::new().append(true).open(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        while learner.next_round < tc.rounds {
            let m = learner.round()?;
            let line = serde_json::to_string(&m).map_err(|e| Error::Runtime(e.to_string()))?;
            writeln!(sink, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
            lines.push(line);
            if tc.checkpoint_every > 0 && learner.next_round % tc.checkpoint_every == 0 && learner.next_round < tc.rounds {
                write_checkpoint(out, &learner)?;
            }
        }
        write_checkpoint(out, &learner)?;
        files.extend(["world.ckpt".to_string(), "policy.ckpt".to_string(), "resume.json".to_string()]);
        let spec = AgentSpec::Policy { policy: learner.policy.cfg, init_log_ratio: data.mean_expert_log_ratio() };
        (spec, learner.next_round)
    } else {
        let spec = match baseline_agent(opts.algo, tc, &data)? {
            Agent::Pid(pid) => AgentSpec::Pid { pid },
            Agent::Cem { cfg, init, history } => AgentSpec::Cem { cem: cfg, init, history },
            Agent::Policy(_) => unreachable!("baselines are not policies"),
        };
        write_file(&out.join("metrics.jsonl"), b"")?;
        (spec, 0)
    };
    write_json(&out.join("agent.json"), &AgentFile { algo: opts.algo, seed: opts.seed, rounds, agent })?;
    let inputs = BTreeMap::from([("dataset".into(), dm.digest()), ("experts".into(), em.digest())]);
    let labels = BTreeMap::from([("algo".to_string(), opts.algo.to_string()), ("seed".to_string(), opts.seed.to_string())]);
    finish_stage(out, "train", &cfg.hash(), inputs, &files, labels)
}

fn write_checkpoint(dir: &Path, learner: &Learner) -> Result<()> {
    // checkpoints hold f32 values; the live parameters keep full precision
    let mut world = learner.world.params.clone();
    world.quantize();
    world.save(&dir.join("world.ckpt"))?;
    let mut policy = learner.policy.params.clone();
    policy.quantize();
    policy.save(&dir.join("policy.ckpt"))?;
    write_json(&dir.join("resume.json"), &learner.resume_state())
}

/// Rebuild the agent stored in a training directory.
pub fn load_agent(cfg: &RunConfig, run: &Path) -> Result<(AgentFile, Agent)> {
    upstream(run, "train")?;
    let file: AgentFile = read_json(&run.join("agent.json"))?;
    let agent = match &file.agent {
        AgentSpec::Policy { policy, init_log_ratio } => {
            let mut world = initial_world(&cfg.train, file.seed);
            world.params.load_into(&run.join("world.ckpt"))?;
            let mut p = Policy::new(*policy, &world, *init_log_ratio, &mut crate::seed::rng(file.seed, "init/policy"));
            p.params.load_into(&run.join("policy.ckpt"))?;
            Agent::Policy(Box::new(p))
        }
        AgentSpec::Pid { pid } => Agent::Pid(*pid),
        AgentSpec::Cem { cem, init, history } => Agent::Cem { cfg: *cem, init: *init, history: history.clone() },
    };
    Ok((file, agent))
}

/// Days selected by a split tag: a single split, `test` (both test splits) or `all`.
pub fn select_split<'d>(days: &'d [EnvironmentDay], tag: &str) -> Result<Vec<&'d EnvironmentDay>> {
    let pick: Box<dyn Fn(Split) -> bool> = match tag {
        "all" => Box::new(|_| true),
        "test" => Box::new(|s: Split| s.is_test()),
        other => {
            let s = Split::parse(other).ok_or_else(|| Error::Usage(format!("unknown split `{other}` (train, test-iid, test-ood, test, all)")))?;
            Box::new(move |x| x == s)
        }
    };
    Ok(days.iter().filter(|d| pick(d.split)).collect())
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub split: String,
    pub dataset: PathBuf,
    pub experts: PathBuf,
    pub out: PathBuf,
}

pub fn eval_stage(cfg: &RunConfig, opts: &EvalOptions) -> Result<(Manifest, RunScores)> {
    cfg.validate()?;
    let (days, dm) = load_days(&opts.dataset)?;
    let (experts, em) = load_experts(&opts.experts)?;
    let tm = upstream(&opts.checkpoint, "train")?;
    let (file, agent) = load_agent(cfg, &opts.checkpoint)?;
    let play = select_split(&days, &opts.split)?;
    if play.is_empty() {
        return Err(Error::Usage(format!("split `{}` has no days", opts.split)));
    }
    let values: BTreeMap<u32, f64> = experts.iter().map(|e| (e.day_id, e.value())).collect();
    let lookup = |id: u32| days.iter().find(|d| d.day_id == id).and_then(|d| values.get(&id).map(|&u| (d, u)));
    let (records, scores) = evaluate(&agent, &play, &lookup, &cfg.train.metrics, file.seed)?;
    let run = run_scores(file.algo, file.seed, scores);
    create_dir(&opts.out)?;
    save_config(&opts.out, cfg)?;
    write_json(&opts.out.join("scores.json"), &run)?;
    write_file(&opts.out.join("episodes.jsonl"), &jsonl(&records)?)?;
    let inputs = BTreeMap::from([("dataset".into(), dm.digest()), ("experts".into(), em.digest()), ("train".into(), tm.digest())]);
    let labels = BTreeMap::from([
        ("algo".to_string(), file.algo.to_string()),
        ("seed".to_string(), file.seed.to_string()),
        ("split".to_string(), opts.split.clone()),
    ]);
    let files = ["scores.json".to_string(), "episodes.jsonl".to_string(), CONFIG.to_string()];
    let m = finish_stage(&opts.out, "eval", &cfg.hash(), inputs, &files, labels)?;
    Ok((m, run))
}

fn jsonl(records: &[EpisodeRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Runtime(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Evaluation directories under `paths`: each path is one, or holds some one level down.
pub fn find_eval_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join("scores.json").exists() {
            out.push(p.clone());
            continue;
        }
        let entries = fs::read_dir(p).map_err(|e| Error::io(p, e))?;
        let mut found: Vec<PathBuf> = Vec::new();
        for e in entries {
            let d = e.map_err(|e| Error::io(p, e))?.path();
            if d.join("scores.json").exists() {
                found.push(d);
            }
        }
        if found.is_empty() {
            return Err(Error::Dependency(format!("no eval results under {} (run `eval` first)", p.display())));
        }
        found.sort();
        out.extend(found);
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Aggregate evaluation results. Results of one (algo, seed) on several
/// splits are merged; inputs produced under different configs are refused
/// unless `force` is set.
pub fn report_stage(runs: &[PathBuf], out: &Path, force: bool) -> Result<(Manifest, MetricsReport)> {
    let dirs = find_eval_dirs(runs)?;
    let mut hashes = BTreeMap::new();
    let mut merged: BTreeMap<(String, u64), Vec<DayScore>> = BTreeMap::new();
    let mut metrics = None;
    for d in &dirs {
        let m = upstream(d, "eval")?;
        hashes.insert(d.display().to_string(), m.digest());
        let cfg = RunConfig::load(&d.join(CONFIG))?;
        match &metrics {
            None => metrics = Some((cfg.train.metrics, m.config_hash.clone())),
            Some((_, h)) if *h != m.config_hash && !force => {
                return Err(Error::Usage(format!("{} was produced under config {} but earlier inputs used {h}; pass --force to mix", d.display(), m.config_hash)));
            }
            Some(_) => {}
        }
        let run: RunScores = read_json(&d.join("scores.json"))?;
        let slot = merged.entry((run.algo.clone(), run.seed)).or_default();
        for s in run.scores {
            if slot.iter().any(|x| x.day_id == s.day_id) {
                return Err(Error::Usage(format!("day {} of {} seed {} appears in more than one input", s.day_id, run.algo, run.seed)));
            }
            slot.push(s);
        }
    }
    let (metrics, cfg_hash) = metrics.ok_or_else(|| Error::Usage("report needs at least one run".into()))?;
    let runs: Vec<RunScores> = merged
        .into_iter()
        .map(|((algo, seed), mut scores)| {
            scores.sort_by_key(|s| s.day_id);
            RunScores { algo, seed, scores }
        })
        .collect();
    let report = aggregate_report(&runs, &metrics)?;
    create_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    write_file(&out.join("report.csv"), report_csv(&report).as_bytes())?;
    let m = finish_stage(out, "report", &cfg_hash, hashes, &["report.json".into(), "report.csv".into()], BTreeMap::new())?;
    Ok((m, report))
}

/// Human-readable table of median TACR per algorithm and group.
pub fn summary_table(report: &MetricsReport) -> String {
    let mut groups: Vec<&String> = report.algos.values().flat_map(|g| g.keys()).collect();
    groups.sort();
    groups.dedup();
    let mut out = format!("{:<8}", "algo");
    for g in &groups {
        out.push_str(&format!(" {g:>14}"));
    }
    out.push('\n');
    for (algo, gs) in &report.algos {
        out.push_str(&format!("{algo:<8}"));
        for g in &groups {
            match gs.get(*g) {
                Some(s) => out.push_str(&format!(" {:>14.4}", s.median_tacr)),
                None => out.push_str(&format!(" {:>14}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

/// Play a trained agent on one day.
pub fn act_stage(cfg: &RunConfig, checkpoint: &Path, dataset: &Path, experts: &Path, day_id: u32) -> Result<EpisodeRecord> {
    let (days, _) = load_days(dataset)?;
    let (experts, _) = load_experts(experts)?;
    let (file, agent) = load_agent(cfg, checkpoint)?;
    let day = days.iter().find(|d| d.day_id == day_id).ok_or_else(|| Error::Usage(format!("no day {day_id} in the dataset")))?;
    let values: BTreeMap<u32, f64> = experts.iter().map(|e| (e.day_id, e.value())).collect();
    let lookup = |id: u32| days.iter().find(|d| d.day_id == id).and_then(|d| values.get(&id).map(|&u| (d, u)));
    let (mut recs, _) = evaluate(&agent, &[day], &lookup, &cfg.train.metrics, file.seed)?;
    Ok(recs.remove(0))
}

/// Exit status for an error: 2 usage, 3 missing dependency, 4 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::InvalidConfig(_) => 2,
        Error::Dependency(_) => 3,
        _ => 4,
    }
}

/// Config small enough for a pipeline run in well under a minute.
pub fn smoke_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.generator.auctions_per_day = 2400;
    cfg.generator.slots = 8;
    for g in &mut cfg.generator.groups {
        g.days = g.days.div_ceil(3);
    }
    cfg.train.world_steps = 40;
    cfg.train.rounds = 6;
    cfg.train.checkpoint_every = 3;
    cfg.train.exploration_episodes = 2;
    cfg.train.teacher.batch_days = 4;
    cfg.train.teacher.steps = 3;
    cfg
}
