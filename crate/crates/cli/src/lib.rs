//! Command-line front end: argument grammar, dispatch and run artifacts.
//!
//! Every run directory holds `scenario.toml` (the exact scenario text used),
//! `summary.toml`, and depending on the subcommand `metrics.csv`,
//! `episodes.csv`, `oracle.csv` and checkpoint files.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use crosslayer_core::dqn::Checkpoint;
use crosslayer_core::scenario::{DEFAULT_SEED, PRESETS};
use crosslayer_core::sim::{
    self, initial_action, oracle_sweep, run_baseline, run_episode, EpisodeLog, EpisodeResult, GreedyPolicy,
    OracleReport, SimError, StepRecord, FEASIBLE_COMPLIANCE,
};
use crosslayer_core::uplink::characterize_requirement;
use crosslayer_core::{Codebook, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const METRICS_HEADER: &str = "window,ue,required_latency_ms,observed_latency_ms,dropped_flag,tx_bytes,bsr_bytes,cqi,mcs,rlc_kb,fps,phy_dl,phy_ul,mac,action_index,reward";
pub const EPISODES_HEADER: &str = "episode,total_reward,compliance,mean_loss,epsilon";

#[derive(Debug, Parser)]
#[command(name = "crosslayer", version, about = "Cross-layer uplink configuration simulator and DQN agent")]
pub struct Cli {
    /// Scenario file, or the name of a shipped preset.
    #[arg(long, global = true, value_name = "FILE")]
    pub scenario: Option<String>,
    /// Run directory for artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training episodes (train) or evaluation episodes (eval).
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a DQN agent on the scenario.
    Train,
    /// Roll out a trained checkpoint greedily.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
    },
    /// Run a fixed configuration profile under a fixed PHY split.
    Baseline {
        /// Profile 1..4: 30/RR/6, 60/RR/6, 60/RR/10, 60/PF/6 (fps/scheduler/RLC KB).
        #[arg(long)]
        profile: u8,
        /// A: 7DL-3UL, B: 5DL-5UL, C: 3DL-7UL, D: 6DL-4UL.
        #[arg(long)]
        phy: String,
    },
    /// Sweep every fixed action, or pick the best action per window.
    Oracle {
        /// Allow sweeps for more than two UEs.
        #[arg(long)]
        force: bool,
        /// Look-ahead oracle choosing the best action for each window.
        #[arg(long)]
        per_window: bool,
    },
    /// Derive a latency requirement from scene geometry.
    Characterize(CharacterizeArgs),
}

#[derive(Debug, Args)]
pub struct CharacterizeArgs {
    /// Field-of-view extent along the direction of travel, metres
    #[arg(long)]
    pub fov_m: f64,
    /// Camera speed, m/s
    #[arg(long)]
    pub speed_mps: f64,
    /// Capture frame rate
    #[arg(long)]
    pub fps: f64,
    /// Fraction of the round-trip budget spent on the uplink, in (0, 1]
    #[arg(long)]
    pub uplink_share: f64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::UnknownProfile(_) | SimError::UnknownPhy(_) | SimError::SweepTooLarge { .. } | SimError::Config(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn parse_and_dispatch<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    if let Command::Characterize(a) = &cli.command {
        return characterize(a, stdout);
    }
    let (mut scenario, source) = load_scenario(cli.scenario.as_deref())?;
    let seed = cli.seed.or(scenario.seed).unwrap_or(DEFAULT_SEED);
    if let (Command::Train, Some(n)) = (&cli.command, cli.episodes) {
        scenario.training.episodes = n;
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("cannot create run directory {}", cli.out.display()))?;
    fs::write(cli.out.join("scenario.toml"), &source).context("cannot write scenario snapshot")?;
    let started = Instant::now();
    let mut summary = Summary::new(&cli.command, &scenario, seed);
    match &cli.command {
        Command::Train => train(&scenario, seed, &cli.out, &mut summary)?,
        Command::Eval { checkpoint } => eval(&scenario, seed, cli.episodes.unwrap_or(1), checkpoint, &cli.out, &mut summary)?,
        Command::Baseline { profile, phy } => {
            let ep = run_baseline(&scenario, *profile, phy)?;
            summary.extra.push(("profile".into(), profile.to_string()));
            summary.extra.push(("phy".into(), toml_string(&phy.to_ascii_uppercase())));
            write_single_episode(&ep, &cli.out, &mut summary)?;
        }
        Command::Oracle { force, per_window } => oracle(&scenario, seed, *force, *per_window, &cli.out, &mut summary)?,
        Command::Characterize(_) => unreachable!("handled above"),
    }
    summary.wall_time_s = started.elapsed().as_secs_f64();
    fs::write(cli.out.join("summary.toml"), summary.render()).context("cannot write summary")?;
    writeln!(stdout, "{}", summary.one_line())?;
    Ok(())
}

/// Resolves `--scenario` as a file path, falling back to a preset name.
/// Returns the scenario and its exact source text.
fn load_scenario(arg: Option<&str>) -> Result<(Scenario, String), Failure> {
    let arg = arg.ok_or_else(|| Failure::Usage("--scenario is required for this subcommand".into()))?;
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| Failure::Runtime(anyhow::anyhow!("cannot read {arg}: {e}")))?
    } else if let Some((_, t)) = PRESETS.iter().find(|(n, _)| *n == arg) {
        (*t).to_string()
    } else {
        return Err(Failure::Usage(format!("scenario `{arg}` is neither a file nor a preset")));
    };
    let scenario = Scenario::from_toml_str(&text).map_err(|e| Failure::Usage(format!("{arg}: {e}")))?;
    Ok((scenario, text))
}

fn characterize(a: &CharacterizeArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let c = characterize_requirement(a.fov_m, a.speed_mps, a.fps, a.uplink_share)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    writeln!(stdout, "dwell_ms = {}", c.dwell_ms)?;
    writeln!(stdout, "frames_in_fov = {}", c.frames_in_fov)?;
    writeln!(stdout, "round_trip_budget_ms = {}", c.round_trip_budget_ms)?;
    writeln!(stdout, "uplink_latency_ms = {}", c.requirement.budget_ms())?;
    Ok(())
}

fn train(scenario: &Scenario, seed: u64, out: &Path, summary: &mut Summary) -> Result<(), Failure> {
    let mut metrics = CsvFile::create(&out.join("metrics.csv"), METRICS_HEADER)?;
    let mut episodes = CsvFile::create(&out.join("episodes.csv"), EPISODES_HEADER)?;
    let steps = scenario.episode_steps() as u64;
    sim::train(scenario, seed, Some(out), |log, ep| {
        write_episode_row(&mut episodes.w, log)?;
        let base = log.episode as u64 * steps;
        for (t, st) in ep.steps.iter().enumerate() {
            write_step_rows(&mut metrics.w, base + t as u64, st)?;
        }
        summary.add_episode(ep);
        Ok(())
    })?;
    metrics.finish()?;
    episodes.finish()?;
    summary.extra.push(("checkpoint".into(), toml_string("checkpoint.bin")));
    Ok(())
}

fn eval(
    scenario: &Scenario,
    seed: u64,
    n: usize,
    checkpoint: &Path,
    out: &Path,
    summary: &mut Summary,
) -> Result<(), Failure> {
    let ck = Checkpoint::load_for(checkpoint, scenario.n_ues()).map_err(SimError::from)?;
    let cb = Codebook::new(scenario.n_ues()).map_err(SimError::from)?;
    if ck.codebook_size as usize != cb.size() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "checkpoint has {} actions, scenario needs {}",
            ck.codebook_size,
            cb.size()
        )));
    }
    let mut metrics = CsvFile::create(&out.join("metrics.csv"), METRICS_HEADER)?;
    let mut episodes = CsvFile::create(&out.join("episodes.csv"), EPISODES_HEADER)?;
    let steps = scenario.episode_steps() as u64;
    for i in 0..n {
        let ep_seed = seed.wrapping_add(i as u64);
        let ep = run_episode(scenario, initial_action(ep_seed, cb.size()), &mut GreedyPolicy(&ck.online))?;
        let log = EpisodeLog {
            episode: i,
            total_reward: ep.total_reward(),
            compliance: ep.compliance(),
            mean_loss: None,
            epsilon: 0.0,
        };
        write_episode_row(&mut episodes.w, &log)?;
        for (t, st) in ep.steps.iter().enumerate() {
            write_step_rows(&mut metrics.w, i as u64 * steps + t as u64, st)?;
        }
        summary.add_episode(&ep);
    }
    metrics.finish()?;
    episodes.finish()?;
    summary.extra.push(("checkpoint".into(), toml_string(&checkpoint.display().to_string())));
    Ok(())
}

fn write_single_episode(ep: &EpisodeResult, out: &Path, summary: &mut Summary) -> Result<(), Failure> {
    let mut metrics = CsvFile::create(&out.join("metrics.csv"), METRICS_HEADER)?;
    for (t, st) in ep.steps.iter().enumerate() {
        write_step_rows(&mut metrics.w, t as u64, st)?;
    }
    metrics.finish()?;
    let mut episodes = CsvFile::create(&out.join("episodes.csv"), EPISODES_HEADER)?;
    let log = EpisodeLog { episode: 0, total_reward: ep.total_reward(), compliance: ep.compliance(), mean_loss: None, epsilon: 0.0 };
    write_episode_row(&mut episodes.w, &log)?;
    episodes.finish()?;
    summary.add_episode(ep);
    Ok(())
}

fn oracle(
    scenario: &Scenario,
    seed: u64,
    force: bool,
    per_window: bool,
    out: &Path,
    summary: &mut Summary,
) -> Result<(), Failure> {
    if per_window {
        let ep = sim::window_oracle(scenario, seed)?;
        summary.extra.push(("mode".into(), toml_string("per-window")));
        return write_single_episode(&ep, out, summary);
    }
    let report = oracle_sweep(scenario, force)?;
    let cb = Codebook::new(scenario.n_ues()).map_err(SimError::from)?;
    write_oracle_csv(&out.join("oracle.csv"), &cb, &report)?;
    let chosen = report.recommended();
    summary.extra.push(("mode".into(), toml_string("sweep")));
    summary.extra.push(("feasible_count".into(), report.feasible().count().to_string()));
    summary.extra.push((
        "best_feasible".into(),
        report.best_feasible.map_or_else(|| toml_string("none"), |a| a.to_string()),
    ));
    summary.extra.push(("best_effort".into(), report.best_effort.to_string()));
    summary.extra.push(("best_reward".into(), report.best_reward.to_string()));
    let ep = sim::run_fixed(scenario, chosen)?;
    write_single_episode(&ep, out, summary)
}

fn write_oracle_csv(path: &Path, cb: &Codebook, report: &OracleReport) -> Result<(), Failure> {
    let mut header = String::from("action_index,phy_dl,phy_ul,mac");
    for u in 0..cb.n_ues() {
        header.push_str(&format!(",rlc_kb_{u},fps_{u}"));
    }
    header.push_str(",total_reward,compliance,feasible");
    let mut f = CsvFile::create(path, &header)?;
    for e in &report.entries {
        let a = cb.decode(e.action_index).map_err(SimError::from)?;
        write!(f.w, "{},{},{},{}", e.action_index, a.phy.dl_slots(), a.phy.ul_slots(), a.mac.short_name())?;
        for u in &a.ues {
            write!(f.w, ",{},{}", u.rlc_kb, u.fps)?;
        }
        writeln!(f.w, ",{},{},{}", e.total_reward, e.compliance, u8::from(e.compliance >= FEASIBLE_COMPLIANCE))?;
    }
    f.finish()
}

struct CsvFile {
    w: BufWriter<File>,
}

impl CsvFile {
    fn create(path: &Path, header: &str) -> Result<Self, Failure> {
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{header}")?;
        Ok(Self { w })
    }

    fn finish(mut self) -> Result<(), Failure> {
        self.w.flush()?;
        Ok(())
    }
}

/// Renders `x` with shortest round-trip precision; infinities as `inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

fn write_step_rows(w: &mut dyn Write, window: u64, st: &StepRecord) -> Result<(), SimError> {
    for (ue, u) in st.ues.iter().enumerate() {
        let m = &u.metrics;
        let last = m.last_sample();
        writeln!(
            w,
            "{window},{ue},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(m.required_latency_ms),
            fmt_f64(m.observed_latency.as_f64()),
            u8::from(m.dropped_frames > 0),
            m.tx_bytes(),
            last.bsr_bytes,
            last.cqi,
            last.mcs,
            u.rlc_kb,
            u.fps,
            st.phy.dl_slots(),
            st.phy.ul_slots(),
            st.mac.short_name(),
            st.action_index,
            fmt_f64(u.reward),
        )?;
    }
    Ok(())
}

fn write_episode_row(w: &mut dyn Write, log: &EpisodeLog) -> Result<(), SimError> {
    writeln!(
        w,
        "{},{},{},{},{}",
        log.episode,
        fmt_f64(log.total_reward),
        fmt_f64(log.compliance),
        log.mean_loss.map(fmt_f64).unwrap_or_default(),
        fmt_f64(log.epsilon)
    )?;
    Ok(())
}

fn toml_string(s: &str) -> String {
    format!("{s:?}")
}

/// Run-level aggregates, recomputable from `metrics.csv`.
struct Summary {
    command: &'static str,
    scenario: String,
    seed: u64,
    n_ues: usize,
    episodes: usize,
    metric_rows: usize,
    met_rows: usize,
    /// Sum of per-step cell rewards (mean over UEs) across all episodes.
    total_reward: f64,
    wall_time_s: f64,
    extra: Vec<(String, String)>,
}

impl Summary {
    fn new(command: &Command, scenario: &Scenario, seed: u64) -> Self {
        let command = match command {
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Baseline { .. } => "baseline",
            Command::Oracle { .. } => "oracle",
            Command::Characterize(_) => "characterize",
        };
        Self {
            command,
            scenario: scenario.name.clone(),
            seed,
            n_ues: scenario.n_ues(),
            episodes: 0,
            metric_rows: 0,
            met_rows: 0,
            total_reward: 0.0,
            wall_time_s: 0.0,
            extra: Vec::new(),
        }
    }

    fn add_episode(&mut self, ep: &EpisodeResult) {
        self.episodes += 1;
        for st in &ep.steps {
            self.total_reward += st.reward;
            for u in &st.ues {
                self.metric_rows += 1;
                self.met_rows += usize::from(u.metrics.observed_latency.meets(u.metrics.required_latency_ms));
            }
        }
    }

    fn compliance(&self) -> f64 {
        if self.metric_rows == 0 {
            0.0
        } else {
            self.met_rows as f64 / self.metric_rows as f64
        }
    }

    fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("command = {}\n", toml_string(self.command)));
        s.push_str(&format!("scenario = {}\n", toml_string(&self.scenario)));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("n_ues = {}\n", self.n_ues));
        s.push_str(&format!("episodes = {}\n", self.episodes));
        s.push_str(&format!("metric_rows = {}\n", self.metric_rows));
        s.push_str(&format!("total_reward = {}\n", self.total_reward));
        s.push_str(&format!("compliance = {}\n", self.compliance()));
        for (k, v) in &self.extra {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!("wall_time_s = {}\n", self.wall_time_s));
        s
    }

    fn one_line(&self) -> String {
        format!(
            "{} {}: {} episode(s), total reward {:.1}, compliance {:.3}",
            self.command,
            self.scenario,
            self.episodes,
            self.total_reward,
            self.compliance()
        )
    }
}
