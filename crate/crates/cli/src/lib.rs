//! `cgfr` command line: data generation, two-phase training, evaluation,
//! ablation sweeps and ROC export.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use cgfr::cfam::CfamVariant;
use cgfr::datagen::{self, io as dio, DataConfig, Dataset};
use cgfr::metrics::{self, MetricsSummary, ScoreSet};
use cgfr::pipeline::{self, Embedded, Prepared};
use cgfr::trainer::{self, TrainReport};
use cgfr::{CgfrError, Config, Result};

pub const REPORT_FILE: &str = "report.txt";
pub const METRICS_FILE: &str = "metrics.txt";
pub const ABLATION_FILE: &str = "ablation.txt";
pub const ROC_FILE: &str = "roc.csv";

#[derive(Debug, Parser)]
#[command(name = "cgfr", about = "Caption-guided face recognition toolkit", version)]
pub struct Cli {
    /// key=value file applied over the built-in desk-scale defaults
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for data, initialisation and protocols (overrides the config)
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (manifest, vocabulary, images)
    GenData,
    /// Train phase 1, phase 2, or both
    Train(TrainArgs),
    /// Evaluate a checkpoint or an embedding file
    Eval(EvalArgs),
    /// Train and evaluate every fusion variant from one phase-1 run
    Ablate(AblateArgs),
    /// Print fpr,tpr,threshold lines of a verification ROC
    ExportRoc(RocArgs),
    /// Run the built-in oracle checks
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Verify,
    Identify,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub phase: PhaseArg,
    /// Dataset directory written by gen-data; generated in memory if absent
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Phase-1 checkpoint to start phase 2 from
    #[arg(long, value_name = "PATH")]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH", required_unless_present = "embeddings", conflicts_with = "embeddings")]
    pub checkpoint: Option<PathBuf>,
    /// Embedding file: `gallery|probe<TAB>identity<TAB>v1,v2,...` per line
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Restrict the summary to one protocol's keys
    #[arg(long, value_enum)]
    pub protocol: Option<Protocol>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Shared phase-1 checkpoint; trained first if absent
    #[arg(long, value_name = "PATH")]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "source")]
pub struct RocSource {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Score file: `genuine|impostor<TAB>score` per line
    #[arg(long, value_name = "PATH")]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    #[command(flatten)]
    pub source: RocSource,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code: 0 on success, 1 on a runtime failure, 2 on a usage
/// error.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

/// Desk defaults, then the config file, then `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = Config::desk();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CgfrError::config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GenData => gen_data(&cfg, &out_dir(cli, "data"), out),
        Command::Train(a) => train(&cfg, a, &out_dir(cli, "runs"), out),
        Command::Eval(a) => eval(cli, &cfg, a, out),
        Command::Ablate(a) => ablate(&cfg, a, &out_dir(cli, "runs"), out),
        Command::ExportRoc(a) => export_roc(cli, &cfg, a, out),
        Command::Selftest => selftest(out),
    }
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn gen_data(cfg: &Config, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let ds = datagen::build_dataset(&DataConfig::from_config(cfg), cfg.seed)?;
    let hash = dio::write_dataset(&ds, dir)?;
    write_atomic(&dir.join("config.txt"), &cfg.to_text())?;
    writeln!(out, "samples={}", ds.len())?;
    writeln!(out, "identities={}", ds.identities().len())?;
    writeln!(out, "manifest_hash={hash}")?;
    Ok(())
}

fn load_dataset(cfg: &Config, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(dir) => dio::read_dataset(dir),
        None => datagen::build_dataset(&DataConfig::from_config(cfg), cfg.seed),
    }
}

/// Dataset, split and frozen features for training from scratch.
fn prepare_fresh(cfg: &Config, data: Option<&Path>) -> Result<Prepared> {
    let ds = load_dataset(cfg, data)?;
    let split = ds.split(&DataConfig::from_config(cfg))?;
    let features = pipeline::encode_dataset(cfg, &ds)?;
    pipeline::prepare(&ds, &split, features)
}

fn finish_report(report: &TrainReport, dir: &Path, out: &mut dyn Write) -> Result<()> {
    write!(out, "{}", report.table())?;
    write_atomic(&dir.join(REPORT_FILE), &report.to_kv())?;
    if let Some(p) = &report.checkpoint {
        writeln!(out, "checkpoint={}", p.display())?;
    }
    Ok(())
}

fn train(cfg: &Config, a: &TrainArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let p = prepare_fresh(cfg, a.data.as_deref())?;
    let phase1 = match a.phase {
        PhaseArg::Two => a
            .init
            .clone()
            .ok_or_else(|| CgfrError::config("--phase 2 needs --init <phase-1 checkpoint>"))?,
        PhaseArg::One | PhaseArg::All => {
            let d = dir.join("phase1");
            let (_, report) = pipeline::run_phase1(&p, cfg, &d)?;
            finish_report(&report, &d, out)?;
            report.checkpoint.expect("phase 1 writes a checkpoint per epoch")
        }
    };
    if a.phase != PhaseArg::One {
        let d = dir.join("phase2");
        let (_, report) = pipeline::run_phase2(&p, cfg, cfg.variant, &phase1, Some(&d))?;
        finish_report(&report, &d, out)?;
    }
    Ok(())
}

fn print_metrics(m: &MetricsSummary, protocol: Option<Protocol>, out: &mut dyn Write) -> Result<String> {
    let keep = |k: &str| match protocol {
        None => true,
        Some(Protocol::Verify) => k != "rank1",
        Some(Protocol::Identify) => k == "rank1",
    };
    let text: String = m
        .to_text()
        .lines()
        .filter(|l| keep(l.split('=').next().unwrap_or("")))
        .map(|l| format!("{l}\n"))
        .collect();
    write!(out, "{text}")?;
    Ok(text)
}

/// Identities and embeddings from an embedding file.
pub fn read_embeddings(path: &Path) -> Result<(Vec<usize>, Vec<usize>, Embedded)> {
    let text = std::fs::read_to_string(path).map_err(|e| CgfrError::Load(format!("{}: {e}", path.display())))?;
    let (mut gi, mut pi) = (Vec::new(), Vec::new());
    let mut e = Embedded {
        gallery: Vec::new(),
        probe: Vec::new(),
    };
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| CgfrError::Format(format!("embeddings line {}: {m}", n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [role, id, vals] = cols[..] else {
            return Err(bad("expected three tab-separated columns"));
        };
        let id: usize = id.trim().parse().map_err(|_| bad("identity is not an integer"))?;
        let v: Vec<f64> = vals
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("non-numeric embedding value"))?;
        match role {
            "gallery" => {
                gi.push(id);
                e.gallery.push(v);
            }
            "probe" => {
                pi.push(id);
                e.probe.push(v);
            }
            _ => return Err(bad("role must be gallery or probe")),
        }
    }
    Ok((gi, pi, e))
}

/// Gallery/probe identities, embeddings and the config governing the
/// protocol, from either a checkpoint or an embedding file.
fn embedded_items(cfg: &Config, checkpoint: Option<&Path>, embeddings: Option<&Path>, data: Option<&Path>) -> Result<(Vec<usize>, Vec<usize>, Embedded, Config)> {
    if let Some(path) = embeddings {
        let (g, p, e) = read_embeddings(path)?;
        return Ok((g, p, e, cfg.clone()));
    }
    let path = checkpoint.ok_or_else(|| CgfrError::config("a checkpoint or an embedding file is required"))?;
    let (model, _) = trainer::load_checkpoint(path)?;
    let mcfg = model.config.clone();
    let ds = load_dataset(&mcfg, data)?;
    let split = ds.split(&DataConfig::from_config(&mcfg))?;
    let features = pipeline::encode_with_model(&model, &ds)?;
    let prepared = pipeline::prepare(&ds, &split, features)?;
    let e = pipeline::embed_fused(&model, &prepared)?;
    Ok((prepared.gallery.identities, prepared.probe.identities, e, mcfg))
}

fn eval(cli: &Cli, cfg: &Config, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (g, p, e, pcfg) = embedded_items(cfg, a.checkpoint.as_deref(), a.embeddings.as_deref(), a.data.as_deref())?;
    let (scores, trial) = pipeline::protocols(&g, &p, &e, &pcfg)?;
    let m = MetricsSummary::compute(&scores, &trial)?;
    let text = print_metrics(&m, a.protocol, out)?;
    let dest = match (&cli.out, &a.checkpoint) {
        (Some(d), _) => Some(d.join(METRICS_FILE)),
        (None, Some(c)) => Some(c.with_file_name(METRICS_FILE)),
        (None, None) => None,
    };
    if let Some(d) = dest {
        write_atomic(&d, &text)?;
    }
    Ok(())
}

fn ablate(cfg: &Config, a: &AblateArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let p = prepare_fresh(cfg, a.data.as_deref())?;
    let phase1 = match &a.init {
        Some(c) => c.clone(),
        None => {
            let d = dir.join("phase1");
            let (_, report) = pipeline::run_phase1(&p, cfg, &d)?;
            write_atomic(&d.join(REPORT_FILE), &report.to_kv())?;
            report.checkpoint.expect("phase 1 writes a checkpoint per epoch")
        }
    };
    let rows = pipeline::run_ablation(&p, cfg, &phase1, &CfamVariant::ALL)?;
    let table = pipeline::ablation_table(&rows);
    write!(out, "{table}")?;
    write_atomic(&dir.join(ABLATION_FILE), &table)?;
    Ok(())
}

fn export_roc(cli: &Cli, cfg: &Config, a: &RocArgs, out: &mut dyn Write) -> Result<()> {
    let scores: ScoreSet = match &a.source.scores {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CgfrError::Load(format!("{}: {e}", path.display())))?;
            metrics::scores_from_text(&text)?
        }
        None => {
            let (g, p, e, pcfg) = embedded_items(cfg, a.source.checkpoint.as_deref(), a.source.embeddings.as_deref(), a.data.as_deref())?;
            pipeline::protocols(&g, &p, &e, &pcfg)?.0
        }
    };
    let text = metrics::roc_to_text(&metrics::roc(&scores)?);
    write!(out, "{text}")?;
    if let Some(d) = &cli.out {
        write_atomic(&d.join(ROC_FILE), &text)?;
    }
    Ok(())
}

fn selftest(out: &mut dyn Write) -> Result<()> {
    let checks = cgfr::selftest::run()?;
    let mut failed = 0;
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{tag} {} {}", c.name, c.detail)?;
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(CgfrError::input(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("cgfr").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn seed_flag_overrides_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "run.seed=5\ntrain.batch_size=8\n").unwrap();
        let path = p.display().to_string();
        let cfg = resolve_config(&parse(&["--config", &path, "gen-data"])).unwrap();
        assert_eq!((cfg.seed, cfg.batch_size, cfg.text_dim), (5, 8, Config::desk().text_dim));
        let cfg = resolve_config(&parse(&["--config", &path, "--seed", "9", "gen-data"])).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(resolve_config(&parse(&["gen-data"])).unwrap(), Config::desk());
    }

    #[test]
    fn embedding_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tsv");
        std::fs::write(&p, "gallery\t3\t1,0\n\nprobe\t3\t0.5, 0.5\nprobe\t4\t-1,2\n").unwrap();
        let (g, pr, e) = read_embeddings(&p).unwrap();
        assert_eq!((g, pr), (vec![3], vec![3, 4]));
        assert_eq!(e.probe[0], vec![0.5, 0.5]);
        for bad in ["gallery\t1\n", "other\t1\t1\n", "probe\tx\t1\n"] {
            std::fs::write(&p, bad).unwrap();
            assert!(matches!(read_embeddings(&p), Err(CgfrError::Format(_))), "{bad:?}");
        }
    }
}
