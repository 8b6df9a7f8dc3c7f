#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use novelclass::crp::{estimate_alpha, AlphaSearch};
use novelclass::data::ClassId;
use novelclass::datagen::{generate_flower, FlowerSpec};
use novelclass::eval::{exhaustive_baseline, replicate_orderings, score, EvalReport};
use novelclass::gibbs::{exact_enumeration_posterior, run_chain, GibbsConfig, GibbsInit, MAX_EXACT};
use novelclass::io::{read_csv, read_json, read_labeled, sidecar_path, write_dataset, write_json, CsvData, Metadata};
use novelclass::model::{known_classes, PriorCounts};
use novelclass::optim::log_space;
use novelclass::plot::{cluster_gaussian, ellipse};
use novelclass::prior_fit::{fit_all, FitConfig};
use novelclass::sir::{AssignmentDecision, ClusterKey, DecisionMode, EngineConfig, EngineState};
use novelclass::{Error, LabeledDataset, NiwParams, Result};

const SEED_ENV: &str = "NOVELCLASS_SEED";

#[derive(Parser)]
#[command(name = "novelclass", version, about = "Online classification with discovery of new classes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the Normal x Inverse-Wishart prior to a labeled CSV.
    Fit(FitArgs),
    /// Calibrate the concentration parameter by CRP simulation.
    Alpha(AlphaArgs),
    /// Stream samples through the particle engine.
    Run(RunArgs),
    /// Collapsed Gibbs sampler (and optional exact posterior) on a short stream.
    Gibbs(GibbsArgs),
    /// Generate the two-ring synthetic dataset.
    Flower(FlowerArgs),
    /// Score a run or replicate the evaluation protocol over stream orderings.
    Eval(EvalArgs),
    /// Emit ellipse and scatter CSVs from engine checkpoints.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` file; flags take precedence over its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed [default: $NOVELCLASS_SEED, else 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EngineFlags {
    /// Concentration parameter [default: 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Particle count [default: 500].
    #[arg(long)]
    particles: Option<usize>,
    /// Known-class CRP counts: actual or uniform [default: actual].
    #[arg(long)]
    prior_counts: Option<String>,
    /// Decision rule: map or marginal [default: map].
    #[arg(long)]
    decision: Option<String>,
    /// JSON with mu0, kappa, sigma0 (row-major) and m, e.g. the output of `fit`.
    /// Fitted on the training set when omitted.
    #[arg(long)]
    prior: Option<PathBuf>,
}

impl EngineFlags {
    fn given(&self) -> bool {
        self.alpha.is_some()
            || self.particles.is_some()
            || self.prior_counts.is_some()
            || self.decision.is_some()
            || self.prior.is_some()
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Lower end of the m bracket [default: d + 1.5].
    #[arg(long)]
    m_min: Option<f64>,
    /// Upper end of the m bracket [default: d + 501].
    #[arg(long)]
    m_max: Option<f64>,
    /// [default: 0.001]
    #[arg(long)]
    kappa_min: Option<f64>,
    /// [default: 1000]
    #[arg(long)]
    kappa_max: Option<f64>,
    /// Points per likelihood curve [default: 40].
    #[arg(long)]
    curve_points: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AlphaArgs {
    /// Target probability that a stream sample joins a known class [default: 0.95].
    #[arg(long)]
    target_p: Option<f64>,
    /// Number of known classes [default: 24].
    #[arg(long)]
    k: Option<usize>,
    /// Pseudo-count per known class [default: 1].
    #[arg(long)]
    seed_count: Option<f64>,
    /// Simulated stream length [default: 1000].
    #[arg(long)]
    n_stream: Option<usize>,
    /// Simulations per grid point [default: 2000].
    #[arg(long)]
    runs: Option<usize>,
    /// [default: 0.01]
    #[arg(long)]
    grid_min: Option<f64>,
    /// [default: 100]
    #[arg(long)]
    grid_max: Option<f64>,
    /// Log-spaced grid size [default: 25].
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RunArgs {
    /// Labeled training CSV (not needed with --resume).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Stream CSV; a label column, if present, is ignored.
    #[arg(long)]
    stream: PathBuf,
    /// JSON-lines decision output, one object per processed sample.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the final engine checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint; the stream is resumed at its sample count.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Process at most this many samples in this invocation.
    #[arg(long)]
    limit: Option<usize>,
    /// Comma-separated sample counts at which to write extra checkpoints.
    #[arg(long, value_delimiter = ',')]
    snapshot_at: Vec<u64>,
    /// Directory for `snapshot-<n>.json` files [default: next to --out].
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineFlags,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GibbsArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// [default: 10000]
    #[arg(long)]
    sweeps: Option<usize>,
    /// [default: 1000]
    #[arg(long)]
    burn_in: Option<usize>,
    /// sequential or singletons [default: sequential].
    #[arg(long)]
    init: Option<String>,
    /// Also enumerate the exact posterior (at most 10 stream samples).
    #[arg(long)]
    exact: bool,
    #[command(flatten)]
    engine: EngineFlags,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FlowerArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// [default: 23]
    #[arg(long)]
    n_classes: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    inner_radius: Option<f64>,
    /// [default: 8]
    #[arg(long)]
    outer_radius: Option<f64>,
    /// Classes on the inner ring [default: proportional to circumference].
    #[arg(long)]
    inner_classes: Option<usize>,
    /// Inverse-Wishart scale is this multiple of the identity [default: 10].
    #[arg(long)]
    iw_scale: Option<f64>,
    /// [default: 20]
    #[arg(long)]
    iw_dof: Option<f64>,
    /// [default: 100]
    #[arg(long)]
    samples_per_class: Option<usize>,
    /// [default: 3]
    #[arg(long)]
    n_heldout: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    /// Training CSV; with --test, runs the replicated-ordering protocol.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Labeled stream for scoring an existing run (with --checkpoint or --decisions).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Final checkpoint of a run; its heaviest particle's clustering is scored.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Decision stream of a run; chosen labels are scored.
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Comma-separated held-out class ids [default: inferred where possible].
    #[arg(long, value_delimiter = ',')]
    heldout: Vec<ClassId>,
    /// [default: 10]
    #[arg(long)]
    orderings: Option<usize>,
    /// Training set with every class, for the supervised baseline.
    #[arg(long)]
    exhaustive_train: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the plain-text table here.
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineFlags,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PlotArgs {
    /// Stream CSV the checkpoints were produced from.
    #[arg(long)]
    stream: PathBuf,
    /// One or more engine checkpoints.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    /// Decision stream, adds a `decided` column to the scatter files.
    #[arg(long)]
    decisions: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Polyline vertices per ellipse [default: 64].
    #[arg(long)]
    points: Option<usize>,
}

fn input_err(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

/// Flags over config-file entries over built-in defaults.
struct Settings {
    entries: BTreeMap<String, String>,
    source: String,
    used: BTreeSet<String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let Some(path) = path else {
            return Ok(Self {
                entries,
                source: String::new(),
                used: BTreeSet::new(),
            });
        };
        let text = fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i as u64 + 1,
                msg: "expected key = value".into(),
            })?;
            entries.insert(k.trim().replace('_', "-"), v.trim().to_string());
        }
        Ok(Self {
            entries,
            source: path.display().to_string(),
            used: BTreeSet::new(),
        })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.entries.get(key).cloned()
    }

    fn get<T: FromStr>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        let from_file = self.raw(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match from_file {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| input_err(format!("{}: invalid value '{v}' for '{key}'", self.source))),
        }
    }

    fn or<T: FromStr>(&mut self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    fn seed(&mut self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.get(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| input_err(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    /// Rejects config-file keys the command never asked for.
    fn finish(&self) -> Result<()> {
        let unknown: Vec<&String> = self.entries.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(input_err(format!(
                "{}: unknown key(s) for this command: {}",
                self.source,
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

fn check_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(input_err(format!("{}: no such file", path.display())))
    }
}

fn load_labeled(path: &Path) -> Result<LabeledDataset> {
    check_file(path)?;
    read_labeled(path)
}

fn load_csv(path: &Path) -> Result<CsvData> {
    check_file(path)?;
    read_csv(path)
}

fn load_prior(path: &Path) -> Result<NiwParams> {
    check_file(path)?;
    read_json(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    metadata: &'a Metadata,
    #[serde(flatten)]
    body: &'a T,
}

fn write_document<T: Serialize>(path: &Path, metadata: &Metadata, body: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(path, &Document { metadata, body })
}

fn parse_flag<T: FromStr<Err = Error>>(s: Option<String>, default: T) -> Result<T> {
    s.map_or(Ok(default), |v| v.parse())
}

/// Engine configuration from flags, config file and (if no prior is given)
/// a prior fitted on the training set.
fn engine_config(flags: &EngineFlags, settings: &mut Settings, seed: u64, train: &LabeledDataset) -> Result<EngineConfig> {
    let alpha = settings.or(flags.alpha, "alpha", 1.0)?;
    let particles = settings.or(flags.particles, "particles", 500)?;
    let prior_counts: PriorCounts = parse_flag(settings.get(flags.prior_counts.clone(), "prior-counts")?, PriorCounts::Actual)?;
    let decision: DecisionMode = parse_flag(settings.get(flags.decision.clone(), "decision")?, DecisionMode::Map)?;
    let niw = match settings.get(flags.prior.clone(), "prior")? {
        Some(p) => load_prior(&p)?,
        None => {
            eprintln!("no --prior given; fitting the prior on the training set");
            fit_all(train, &FitConfig::default())?.niw
        }
    };
    if niw.dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: niw.dim(),
            got: train.dim(),
        });
    }
    let cfg = EngineConfig {
        particles,
        alpha,
        niw,
        prior_counts,
        seed,
        decision,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let mut st = Settings::load(a.common.config.as_deref())?;
    let defaults = FitConfig::default();
    let m_min = st.get(a.m_min, "m-min")?;
    let m_max = st.get(a.m_max, "m-max")?;
    let kappa_bounds = (
        st.or(a.kappa_min, "kappa-min", defaults.kappa_bounds.0)?,
        st.or(a.kappa_max, "kappa-max", defaults.kappa_bounds.1)?,
    );
    let curve_points = st.or(a.curve_points, "curve-points", defaults.curve_points)?;
    let _ = st.raw("seed");
    st.finish()?;
    let data = load_labeled(&a.data)?;
    let d = data.dim() as f64;
    let m_bounds = match (m_min, m_max) {
        (None, None) => None,
        (lo, hi) => Some((lo.unwrap_or(d + 1.5), hi.unwrap_or(d + 501.0))),
    };
    let cfg = FitConfig {
        m_bounds,
        kappa_bounds,
        curve_points,
    };
    let report = fit_all(&data, &cfg)?;
    let meta = Metadata::new(
        "fit",
        None,
        json!({ "data": a.data.display().to_string(), "fit": cfg }),
    );
    write_document(&a.out, &meta, &report)?;
    eprintln!(
        "m = {:.6}, kappa = {:.6} ({} classes used, {} skipped)",
        report.niw.m(),
        report.niw.kappa(),
        report.classes_used,
        report.classes_skipped
    );
    Ok(())
}

fn cmd_alpha(a: AlphaArgs) -> Result<()> {
    let mut st = Settings::load(a.common.config.as_deref())?;
    let seed = st.seed(a.common.seed)?;
    let target_p = st.or(a.target_p, "target-p", 0.95)?;
    let k = st.or(a.k, "k", 24)?;
    let seed_count = st.or(a.seed_count, "seed-count", 1.0)?;
    let n_stream = st.or(a.n_stream, "n-stream", 1000)?;
    let runs = st.or(a.runs, "runs", 2000)?;
    let grid_min = st.or(a.grid_min, "grid-min", 0.01)?;
    let grid_max = st.or(a.grid_max, "grid-max", 100.0)?;
    let grid_points = st.or(a.grid_points, "grid-points", 25)?;
    st.finish()?;
    if k == 0 || !(seed_count > 0.0) {
        return Err(input_err("k and seed-count must be positive"));
    }
    if !(grid_min > 0.0 && grid_max > grid_min && grid_points >= 2) {
        return Err(input_err("alpha grid needs 0 < grid-min < grid-max and at least 2 points"));
    }
    let search = AlphaSearch {
        target_p,
        seed_counts: vec![seed_count; k],
        n_stream,
        grid: log_space(grid_min, grid_max, grid_points),
        runs_per_alpha: runs,
        seed,
    };
    let est = estimate_alpha(&search)?;
    println!("alpha = {} (p_hat = {:.6}, target {target_p})", est.alpha, est.p_hat);
    println!("{:>14}  {:>10}", "alpha", "p_hat");
    for (alpha, p) in &est.curve {
        println!("{alpha:>14.6}  {p:>10.6}");
    }
    if let Some(out) = &a.out {
        let meta = Metadata::new(
            "alpha",
            Some(seed),
            json!({ "target_p": target_p, "k": k, "seed_count": seed_count, "n_stream": n_stream,
                    "runs": runs, "grid_min": grid_min, "grid_max": grid_max, "grid_points": grid_points }),
        );
        write_document(out, &meta, &est)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DecisionLine<'a> {
    index: u64,
    chosen_label: &'a novelclass::sir::Label,
    p_novel: f64,
    labeled_posteriors: &'a [(ClassId, f64)],
    unlabeled_mass: f64,
    ess: f64,
    k_tilde: usize,
}

fn write_decision<W: Write>(w: &mut W, d: &AssignmentDecision) -> Result<()> {
    let line = DecisionLine {
        index: d.index,
        chosen_label: &d.chosen_label,
        p_novel: d.p_novel,
        labeled_posteriors: &d.labeled_posteriors,
        unlabeled_mass: d.unlabeled_mass,
        ess: d.ess,
        k_tilde: d.k_tilde,
    };
    serde_json::to_writer(&mut *w, &line)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn save_checkpoint(path: &Path, state: &EngineState) -> Result<()> {
    let mut w = create(path)?;
    state.write_checkpoint(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut st = Settings::load(a.common.config.as_deref())?;
    let stream = load_csv(&a.stream)?;
    let mut state = match &a.resume {
        Some(ckpt) => {
            if a.engine.given() || a.common.seed.is_some() {
                return Err(input_err("engine settings come from the checkpoint when resuming"));
            }
            check_file(ckpt)?;
            let f = File::open(ckpt)?;
            EngineState::read_checkpoint(std::io::BufReader::new(f))?
        }
        None => {
            let train_path = a.train.as_ref().ok_or_else(|| input_err("--train is required unless resuming"))?;
            let train = load_labeled(train_path)?;
            let seed = st.seed(a.common.seed)?;
            let cfg = engine_config(&a.engine, &mut st, seed, &train)?;
            EngineState::init(cfg, &train)?
        }
    };
    st.finish()?;
    if stream.dim != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: stream.dim,
        });
    }
    let start = state.n_seen() as usize;
    if start > stream.len() {
        return Err(input_err(format!(
            "checkpoint has seen {start} samples but the stream holds {}",
            stream.len()
        )));
    }
    let end = a.limit.map_or(stream.len(), |l| (start + l).min(stream.len()));
    let snapshots: BTreeSet<u64> = a.snapshot_at.iter().copied().collect();
    let snap_dir = a
        .snapshot_dir
        .clone()
        .unwrap_or_else(|| a.out.parent().map(Path::to_path_buf).unwrap_or_default());

    let meta = Metadata::new(
        "run",
        Some(state.config().seed),
        json!({
            "engine": state.config(),
            "stream": a.stream.display().to_string(),
            "train": a.train.as_ref().map(|p| p.display().to_string()),
            "resumed_from": a.resume.as_ref().map(|p| p.display().to_string()),
            "first_index": start,
            "end_index": end,
        }),
    );
    let mut out = create(&a.out)?;
    write_json(&sidecar_path(&a.out), &meta)?;
    for x in &stream.samples[start..end] {
        let d = state.step(x)?;
        write_decision(&mut out, &d)?;
        if snapshots.contains(&state.n_seen()) {
            save_checkpoint(&snap_dir.join(format!("snapshot-{}.json", state.n_seen())), &state)?;
        }
    }
    if let Some(p) = &a.checkpoint {
        save_checkpoint(p, &state)?;
    }
    let best = state.map_particle();
    eprintln!(
        "processed samples {start}..{end}; heaviest particle holds {} discovered clusters; ESS {:.1}",
        best.discovered_count(),
        state.effective_sample_size()
    );
    Ok(())
}

fn cmd_gibbs(a: GibbsArgs) -> Result<()> {
    let mut st = Settings::load(a.common.config.as_deref())?;
    let seed = st.seed(a.common.seed)?;
    let train = load_labeled(&a.train)?;
    let stream = load_csv(&a.stream)?;
    let cfg = engine_config(&a.engine, &mut st, seed, &train)?;
    let sweeps = st.or(a.sweeps, "sweeps", 10_000)?;
    let burn_in = st.or(a.burn_in, "burn-in", 1_000)?;
    let init = match st.get(a.init.clone(), "init")?.as_deref() {
        None | Some("sequential") => GibbsInit::Sequential,
        Some("singletons") => GibbsInit::Singletons,
        Some(other) => return Err(input_err(format!("unknown init '{other}'"))),
    };
    st.finish()?;
    if stream.dim != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: stream.dim,
        });
    }
    if a.exact && stream.len() > MAX_EXACT {
        return Err(input_err(format!("--exact accepts at most {MAX_EXACT} stream samples")));
    }
    let known = known_classes(&train, cfg.prior_counts)?;
    let mut gcfg = GibbsConfig::new(cfg.alpha, sweeps, burn_in, seed);
    gcfg.init = init;
    let summary = run_chain(&stream.samples, &known, &cfg.niw, &gcfg)?;
    let exact = if a.exact {
        Some(exact_enumeration_posterior(&stream.samples, &known, &cfg.niw, cfg.alpha)?)
    } else {
        None
    };
    let meta = Metadata::new(
        "gibbs",
        Some(seed),
        json!({
            "niw": cfg.niw,
            "alpha": cfg.alpha,
            "prior_counts": cfg.prior_counts,
            "known_count_total": known.iter().map(|k| k.prior_count).sum::<f64>(),
            "train": a.train.display().to_string(),
            "stream": a.stream.display().to_string(),
        }),
    );
    write_document(&a.out, &meta, &json!({ "summary": summary, "exact": exact }))?;
    Ok(())
}

fn cmd_flower(a: FlowerArgs) -> Result<()> {
    let mut st = Settings::load(a.common.config.as_deref())?;
    let d = FlowerSpec::default();
    let spec = FlowerSpec {
        n_classes: st.or(a.n_classes, "n-classes", d.n_classes)?,
        inner_radius: st.or(a.inner_radius, "inner-radius", d.inner_radius)?,
        outer_radius: st.or(a.outer_radius, "outer-radius", d.outer_radius)?,
        inner_classes: st.get(a.inner_classes, "inner-classes")?,
        iw_scale: DMatrix::identity(2, 2) * st.or(a.iw_scale, "iw-scale", 10.0)?,
        iw_dof: st.or(a.iw_dof, "iw-dof", d.iw_dof)?,
        samples_per_class: st.or(a.samples_per_class, "samples-per-class", d.samples_per_class)?,
        n_heldout: st.or(a.n_heldout, "n-heldout", d.n_heldout)?,
        seed: st.seed(a.common.seed)?,
    };
    st.finish()?;
    let data = generate_flower(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    let meta = Metadata::new("flower", Some(spec.seed), json!({ "spec": spec, "heldout": data.heldout }));
    for (name, ds) in [("train.csv", &data.train), ("test.csv", &data.test)] {
        let path = a.out_dir.join(name);
        write_dataset(&path, ds)?;
        write_json(&sidecar_path(&path), &meta)?;
    }
    write_document(
        &a.out_dir.join("flower.json"),
        &meta,
        &json!({ "heldout": data.heldout, "classes": data.classes }),
    )?;
    eprintln!(
        "train {} samples, test {} samples, held-out classes {:?}",
        data.train.len(),
        data.test.len(),
        data.heldout
    );
    Ok(())
}

fn read_decisions(path: &Path) -> Result<Vec<ClusterKey>> {
    check_file(path)?;
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        let label: novelclass::sir::Label = serde_json::from_value(v["chosen_label"].clone()).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i as u64 + 1,
            msg: format!("chosen_label: {e}"),
        })?;
        out.push(label.key());
    }
    Ok(out)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut st = Settings::load(a.common.config.as_deref())?;
    let seed = st.seed(a.common.seed)?;
    let (report, engine_cfg, test) = if let (Some(train_p), Some(test_p)) = (&a.train, &a.test) {
        let train = load_labeled(train_p)?;
        let test = load_labeled(test_p)?;
        let cfg = engine_config(&a.engine, &mut st, seed, &train)?;
        let orderings = st.or(a.orderings, "orderings", 10)?;
        st.finish()?;
        let heldout = if a.heldout.is_empty() {
            let known: BTreeSet<ClassId> = train.class_ids().into_iter().collect();
            test.class_ids().into_iter().filter(|c| !known.contains(c)).collect()
        } else {
            a.heldout.clone()
        };
        let report = replicate_orderings(&cfg, &train, &test, &heldout, orderings, seed)?;
        (report, Some(cfg), test)
    } else {
        let truth_p = a.truth.as_ref().ok_or_else(|| input_err("give --train and --test, or --truth with --checkpoint or --decisions"))?;
        st.finish()?;
        let truth = load_labeled(truth_p)?;
        let (assignments, known, cfg) = match (&a.checkpoint, &a.decisions) {
            (Some(c), None) => {
                check_file(c)?;
                let state = EngineState::read_checkpoint(std::io::BufReader::new(File::open(c)?))?;
                let known: BTreeSet<ClassId> = state.known().iter().map(|k| k.id).collect();
                (state.map_assignments(), Some(known), Some(state.config().clone()))
            }
            (None, Some(d)) => (read_decisions(d)?, None, None),
            _ => return Err(input_err("give exactly one of --checkpoint and --decisions")),
        };
        if assignments.len() != truth.len() {
            return Err(input_err(format!(
                "{} assignments but {} labeled samples in --truth",
                assignments.len(),
                truth.len()
            )));
        }
        let heldout: Vec<ClassId> = match (a.heldout.is_empty(), known) {
            (false, _) => a.heldout.clone(),
            (true, Some(k)) => truth.class_ids().into_iter().filter(|c| !k.contains(c)).collect(),
            (true, None) => return Err(input_err("--heldout is required when scoring --decisions")),
        };
        let run = score(&assignments, truth.labels(), &heldout)?;
        (EvalReport::from_runs(vec![run])?, cfg, truth)
    };

    let baseline = match &a.exhaustive_train {
        Some(p) => {
            let full = load_labeled(p)?;
            let (niw, counts) = match &engine_cfg {
                Some(c) => (c.niw.clone(), c.prior_counts),
                None => (fit_all(&full, &FitConfig::default())?.niw, PriorCounts::Actual),
            };
            Some(exhaustive_baseline(&full, &test, &niw, counts)?)
        }
        None => None,
    };

    let mut table = report.to_table();
    if let Some(b) = &baseline {
        table.push_str(&format!("exhaustive baseline accuracy: {:.1} %\n", 100.0 * b.accuracy));
    }
    print!("{table}");
    if let Some(t) = &a.table {
        let mut w = create(t)?;
        w.write_all(table.as_bytes())?;
        w.flush()?;
    }
    let meta = Metadata::new(
        "eval",
        Some(seed),
        json!({
            "engine": engine_cfg,
            "train": a.train.as_ref().map(|p| p.display().to_string()),
            "test": a.test.as_ref().map(|p| p.display().to_string()),
            "truth": a.truth.as_ref().map(|p| p.display().to_string()),
        }),
    );
    write_document(&a.out, &meta, &json!({ "report": report, "exhaustive_baseline": baseline }))?;
    Ok(())
}

fn key_label(k: &ClusterKey) -> String {
    k.to_string()
}

fn cmd_plotdata(a: PlotArgs) -> Result<()> {
    let stream = load_csv(&a.stream)?;
    let points = a.points.unwrap_or(64);
    let decided = match &a.decisions {
        Some(d) => Some(read_decisions(d)?),
        None => None,
    };
    fs::create_dir_all(&a.out_dir)?;
    for ckpt in &a.checkpoint {
        check_file(ckpt)?;
        let state = EngineState::read_checkpoint(std::io::BufReader::new(File::open(ckpt)?))?;
        let n = state.n_seen() as usize;
        if n > stream.len() || state.dim() != stream.dim {
            return Err(input_err(format!("{} does not belong to this stream", ckpt.display())));
        }
        let best = state.map_particle();
        let assignments = best.assignments();
        let meta = Metadata::new(
            "plotdata",
            Some(state.config().seed),
            json!({ "checkpoint": ckpt.display().to_string(), "n_seen": n, "points": points }),
        );

        if stream.dim == 2 {
            let path = a.out_dir.join(format!("ellipses-{n}.csv"));
            let mut w = create(&path)?;
            writeln!(w, "source,cluster,vertex,x,y")?;
            let emit = |w: &mut BufWriter<File>, source: &str, name: &str, mean: &DVector<f64>, cov: &DMatrix<f64>| -> Result<()> {
                for (v, p) in ellipse(mean, cov, 3.0, points)?.iter().enumerate() {
                    writeln!(w, "{source},{name},{v},{:.16e},{:.16e}", p[0], p[1])?;
                }
                Ok(())
            };
            for c in best.clusters() {
                let (mean, cov) = cluster_gaussian(&state.config().niw, c.stats())?;
                let source = if c.key().is_labeled() { "labeled" } else { "discovered" };
                emit(&mut w, source, &key_label(&c.key()), &mean, &cov)?;
            }
            if let Some(labels) = &stream.labels {
                let seen = LabeledDataset::new(2, stream.samples[..n].to_vec(), labels[..n].to_vec())?;
                for (id, s) in seen.class_stats() {
                    if let Some(cov) = s.covariance().filter(|_| s.n() >= 3) {
                        emit(&mut w, "true", &id.to_string(), s.mean(), &cov)?;
                    }
                }
            }
            w.flush()?;
            write_json(&sidecar_path(&path), &meta)?;
        } else {
            eprintln!("warning: data are {}-dimensional; ellipses skipped, scatter uses the first two coordinates", stream.dim);
        }

        let path = a.out_dir.join(format!("scatter-{n}.csv"));
        let mut w = create(&path)?;
        writeln!(w, "index,x,y,map_cluster,decided,truth")?;
        for i in 0..n {
            let x = &stream.samples[i];
            let y = if x.len() > 1 { x[1] } else { 0.0 };
            let dec = decided.as_ref().and_then(|d| d.get(i)).map(key_label).unwrap_or_default();
            let truth = stream.labels.as_ref().map(|l| l[i].to_string()).unwrap_or_default();
            writeln!(w, "{i},{:.16e},{:.16e},{},{dec},{truth}", x[0], y, key_label(&assignments[i]))?;
        }
        w.flush()?;
        write_json(&sidecar_path(&path), &meta)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Alpha(a) => cmd_alpha(a),
        Command::Run(a) => cmd_run(a),
        Command::Gibbs(a) => cmd_gibbs(a),
        Command::Flower(a) => cmd_flower(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plotdata(a) => cmd_plotdata(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
