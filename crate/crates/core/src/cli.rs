//! Batch front-end. Every run is described by a `RunConfig` (TOML, flags
//! override) and writes into its output directory:
//!
//! * `result.json`: the full `ResultRecord` (schema version, config echo,
//!   build id, certificates, validation, timings);
//! * `config.toml`: the resolved configuration, replayable with `--config`;
//! * `table.csv`: one row per (env, mixer, σ) with ε_cert, R_min, clean and
//!   attacked reward;
//! * `steps.csv` (certify-state): per-step D and per-agent d_n.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 missing artifact, 4 numerical
//! failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{validate_certificates, AttackConfig, ValidationReport};
use crate::certify::{certify_trajectory, tcrgr, RewardCertificate, SearchOptions, StateCertificate};
use crate::envs::{episode_reward, GridSpec};
use crate::error::{Error, Result};
use crate::policy::{train, JointPolicy, MixerKind, TrainConfig};
use crate::smoothing::NoiseConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma: Vec<f64>,
    pub samples: u64,
    pub alpha: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { sigma: vec![0.03, 0.06, 0.1], samples: 10_000, alpha: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in layout name or path to a layout file.
    pub env: String,
    pub mixer: MixerKind,
    /// Policy checkpoint directory (written by train, read otherwise).
    pub policy: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Root seed; training, smoothing and attacks use derived sub-streams.
    pub seed: u64,
    pub pruning: bool,
    pub max_expansions: Option<usize>,
    /// PGD trials per certified agent and budget (attack mode).
    pub trials: usize,
    /// Result files merged by report mode.
    pub inputs: Vec<PathBuf>,
    pub noise: NoiseSection,
    pub train: TrainConfig,
    pub attack: AttackConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: "checkers".into(),
            mixer: MixerKind::Vdn,
            policy: None,
            out: None,
            seed: 0,
            pruning: true,
            max_expansions: None,
            trials: 20,
            inputs: Vec::new(),
            noise: NoiseSection::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

/// Independent seed for one named use of the root seed.
pub fn sub_seed(seed: u64, namespace: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(namespace.as_bytes())
        .chain_update(seed.to_le_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".into());
            Error::Config {
                field,
                message: format!("{}: {}", origin.display(), e.message()),
            }
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        if mode != Mode::Report {
            if self.noise.sigma.is_empty() {
                return Err(Error::config("noise.sigma", "need at least one value"));
            }
            for &sigma in &self.noise.sigma {
                self.noise_config(sigma)?;
            }
        }
        if mode == Mode::Train {
            self.train.validate()?;
        }
        if mode == Mode::Attack {
            self.attack.validate()?;
        }
        if mode == Mode::Report && self.inputs.is_empty() {
            return Err(Error::config("inputs", "report needs at least one result file"));
        }
        Ok(())
    }

    pub fn noise_config(&self, sigma: f64) -> Result<NoiseConfig> {
        NoiseConfig::new(sigma, self.noise.samples, self.noise.alpha, sub_seed(self.seed, "noise"))
    }

    fn policy_dir(&self) -> Result<PathBuf> {
        self.policy
            .clone()
            .ok_or_else(|| Error::config("policy", "a policy checkpoint directory is required"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    CertifyState,
    CertifyReward,
    Attack,
    Report,
}

#[derive(Debug, Parser)]
#[command(name = "marlcert", version, about = "Certify robustness of cooperative multi-agent policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a VDN or monotone-QMIX policy and write its checkpoint.
    Train(Flags),
    /// Certify every state of the greedy rollout (per-step D and d_n).
    CertifyState(Flags),
    /// Tree search for ε_cert and the reward lower bound R_min.
    CertifyReward(Flags),
    /// Certify, then attack the certificates with PGD.
    Attack(Flags),
    /// Merge result files into one table sorted by (env, mixer, σ).
    Report(Flags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub mixer: Option<String>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated list of noise levels.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub no_prune: bool,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Result files (report mode).
    pub inputs: Vec<PathBuf>,
}

impl Command {
    pub fn split(self) -> (Mode, Flags) {
        match self {
            Command::Train(f) => (Mode::Train, f),
            Command::CertifyState(f) => (Mode::CertifyState, f),
            Command::CertifyReward(f) => (Mode::CertifyReward, f),
            Command::Attack(f) => (Mode::Attack, f),
            Command::Report(f) => (Mode::Report, f),
        }
    }
}

/// Config file (if any) with flags applied on top.
pub fn resolve(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &flags.env {
        cfg.env = v.clone();
    }
    if let Some(v) = &flags.mixer {
        cfg.mixer = v.parse()?;
    }
    if let Some(v) = &flags.policy {
        cfg.policy = Some(v.clone());
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = &flags.sigma {
        cfg.noise.sigma = v.clone();
    }
    if let Some(v) = flags.samples {
        cfg.noise.samples = v;
    }
    if let Some(v) = flags.alpha {
        cfg.noise.alpha = v;
    }
    if flags.no_prune {
        cfg.pruning = false;
    }
    if let Some(v) = flags.trials {
        cfg.trials = v;
    }
    if let Some(v) = &flags.out {
        cfg.out = Some(v.clone());
    }
    if !flags.inputs.is_empty() {
        cfg.inputs = flags.inputs.clone();
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub env: String,
    pub mixer: String,
    pub sigma: f64,
    pub epsilon_cert: Option<f64>,
    pub r_min: Option<f64>,
    pub clean_reward: Option<f64>,
    pub attacked_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub episodes: usize,
    pub updates: usize,
    pub episode_rewards: Vec<f64>,
    pub greedy_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRun {
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_certificates: Option<Vec<StateCertificate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_certificate: Option<RewardCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub build: String,
    pub mode: Mode,
    pub config: RunConfig,
    pub policy_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    pub runs: Vec<SigmaRun>,
    pub table: Vec<TableRow>,
    pub seconds: f64,
}

impl ResultRecord {
    /// The record with wall-clock fields zeroed; everything else is a pure
    /// function of the config and checkpoint.
    pub fn without_timings(&self) -> ResultRecord {
        let mut r = self.clone();
        r.seconds = 0.0;
        r.runs.iter_mut().for_each(|run| run.seconds = 0.0);
        r
    }

    pub fn load(path: &Path) -> Result<ResultRecord> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let record: ResultRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("schema version {} is not {SCHEMA_VERSION}", record.schema_version),
            });
        }
        Ok(record)
    }
}

pub fn build_id() -> String {
    format!(
        "marlcert {}{}",
        env!("CARGO_PKG_VERSION"),
        option_env!("MARLCERT_BUILD_ID").map(|s| format!("+{s}")).unwrap_or_default()
    )
}

fn load_policy(cfg: &RunConfig, spec: &GridSpec) -> Result<JointPolicy> {
    let policy = JointPolicy::load(cfg.policy_dir()?)?;
    policy.check_spec(spec)?;
    Ok(policy)
}

/// Executes one mode and writes its outputs. Returns the record.
pub fn run(mode: Mode, cfg: &RunConfig) -> Result<ResultRecord> {
    cfg.validate(mode)?;
    let started = Instant::now();
    let mut echo = cfg.clone();
    echo.out = None;
    let mut record = ResultRecord {
        schema_version: SCHEMA_VERSION,
        build: build_id(),
        mode,
        config: echo,
        policy_fingerprint: None,
        training: None,
        runs: Vec::new(),
        table: Vec::new(),
        seconds: 0.0,
    };

    if mode == Mode::Report {
        for path in &cfg.inputs {
            record.table.extend(ResultRecord::load(path)?.table);
        }
        record.table.sort_by(|a, b| {
            (&a.env, &a.mixer)
                .cmp(&(&b.env, &b.mixer))
                .then(a.sigma.total_cmp(&b.sigma))
        });
    } else {
        let spec = GridSpec::load(&cfg.env)?;
        let policy = if mode == Mode::Train {
            let mut tc = cfg.train.clone();
            tc.seed = sub_seed(cfg.seed, "train");
            let report = train(&spec, &tc, cfg.mixer)?;
            report.policy.save(cfg.policy_dir()?)?;
            record.training = Some(TrainingSummary {
                episodes: tc.episodes,
                updates: report.updates,
                greedy_reward: episode_reward(&spec, &report.policy, spec.step_cap)?,
                episode_rewards: report.episode_rewards,
            });
            report.policy
        } else {
            load_policy(cfg, &spec)?
        };
        record.policy_fingerprint = Some(policy.fingerprint());
        if mode != Mode::Train {
            for &sigma in &cfg.noise.sigma {
                let t0 = Instant::now();
                let run = run_sigma(mode, cfg, &spec, &policy, sigma)?;
                let mut run = run;
                run.seconds = t0.elapsed().as_secs_f64();
                record.table.push(TableRow {
                    env: spec.name.clone(),
                    mixer: policy.mixer_kind().as_str().into(),
                    sigma,
                    epsilon_cert: run.reward_certificate.as_ref().map(|r| r.epsilon_cert),
                    r_min: run.reward_certificate.as_ref().map(|r| r.r_min),
                    clean_reward: run.reward_certificate.as_ref().map(|r| r.clean_reward),
                    attacked_reward: run
                        .validation
                        .as_ref()
                        .and_then(|v| v.reward_check.as_ref())
                        .map(|c| c.attacked_reward),
                });
                record.runs.push(run);
            }
        }
    }
    record.seconds = started.elapsed().as_secs_f64();
    if let Some(out) = &cfg.out {
        write_outputs(out, &record)?;
    }
    Ok(record)
}

fn run_sigma(
    mode: Mode,
    cfg: &RunConfig,
    spec: &GridSpec,
    policy: &JointPolicy,
    sigma: f64,
) -> Result<SigmaRun> {
    let noise = cfg.noise_config(sigma)?;
    let options = SearchOptions { pruning: cfg.pruning, max_expansions: cfg.max_expansions };
    let mut run = SigmaRun {
        sigma,
        state_certificates: None,
        reward_certificate: None,
        validation: None,
        seconds: 0.0,
    };
    match mode {
        Mode::CertifyState => {
            run.state_certificates = Some(certify_trajectory(policy, spec, &noise)?);
        }
        Mode::CertifyReward => {
            run.reward_certificate = Some(tcrgr(policy, spec, &noise, options)?);
        }
        Mode::Attack => {
            let certs = certify_trajectory(policy, spec, &noise)?;
            let reward = tcrgr(policy, spec, &noise, options)?;
            let attack = AttackConfig { seed: sub_seed(cfg.seed, "attack"), ..cfg.attack };
            run.validation = Some(validate_certificates(
                policy,
                spec,
                &certs,
                Some(&reward),
                cfg.trials,
                &attack,
            )?);
            run.state_certificates = Some(certs);
            run.reward_certificate = Some(reward);
        }
        Mode::Train | Mode::Report => unreachable!("handled by run"),
    }
    Ok(run)
}

fn write_outputs(out: &Path, record: &ResultRecord) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, text: String| {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write(
        "result.json",
        serde_json::to_string_pretty(record).expect("record serializes"),
    )?;
    write("config.toml", toml::to_string(&record.config).expect("config serializes"))?;
    if !record.table.is_empty() {
        write_table(&out.join("table.csv"), &record.table)?;
    }
    let steps: Vec<_> = record
        .runs
        .iter()
        .filter_map(|r| r.state_certificates.as_ref().map(|c| (r.sigma, c)))
        .collect();
    if !steps.is_empty() {
        write_steps(&out.join("steps.csv"), &steps)?;
    }
    Ok(())
}

pub fn write_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn write_steps(path: &Path, runs: &[(f64, &Vec<StateCertificate>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let agents = runs
        .iter()
        .flat_map(|(_, c)| c.iter())
        .map(|c| c.result.per_agent_radius.len())
        .max()
        .unwrap_or(0);
    let mut header = vec!["sigma".to_string(), "step".into(), "min_radius".into(), "certified".into()];
    header.extend((0..agents).map(|n| format!("d_{n}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (sigma, certs) in runs {
        for c in certs.iter() {
            let mut row = vec![
                sigma.to_string(),
                c.step.to_string(),
                c.result.min_radius.to_string(),
                c.result.certified_set.len().to_string(),
            ];
            row.extend(c.result.per_agent_radius.iter().map(f64::to_string));
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse { path: path.to_path_buf(), message: e.to_string() }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidSpec(_) | Error::Parse { .. } => 2,
        Error::MissingArtifact(_) => 3,
        Error::NonFinite(_) | Error::Divergence { .. } | Error::Domain(_) => 4,
        _ => 1,
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (mode, flags) = cli.command.split();
    let outcome = resolve(&flags).and_then(|cfg| run(mode, &cfg));
    match outcome {
        Ok(record) => {
            for row in &record.table {
                println!(
                    "{} {} sigma={} eps_cert={} r_min={} clean={} attacked={}",
                    row.env,
                    row.mixer,
                    row.sigma,
                    fmt_opt(row.epsilon_cert),
                    fmt_opt(row.r_min),
                    fmt_opt(row.clean_reward),
                    fmt_opt(row.attacked_reward)
                );
            }
            if let Some(t) = &record.training {
                println!("trained {} episodes, greedy reward {}", t.episodes, t.greedy_reward);
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}
