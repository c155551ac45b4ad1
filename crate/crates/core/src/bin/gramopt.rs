use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gramopt::baseline::{percentile_test, sample_baseline, Verdict, DEFAULT_SAMPLES};
use gramopt::config::{self, InstanceSweepConfig, SystemSweepConfig};
use gramopt::corpus::{
    build_animate_pairs, build_counts, open_conllu, report, Allowlist, GrammarCountTable, Inventory, LanguageReport,
    PairingRule, ParseStats, ReportConfig,
};
use gramopt::encoder::Tradeoff;
use gramopt::sweep::{
    referent_rows, run_instance_sweep, run_system_sweep, validate_cells, validate_instance_sweep, SystemCell, SystemRow,
};
use gramopt::theorems::{render_table, TheoremReport, DEFAULT_TOL};
use gramopt::{Error, Result};

const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "gramopt",
    version,
    about = "Grammatical value system simulations and corpus statistics"
)]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "GRAMOPT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Instance-level sweep over α for one attribute marginal.
    SimulateInstance(InstanceArgs),
    /// Three-stage lexicon optimization over a (feature, k, β) grid.
    SimulateSystem(SystemArgs),
    /// Numerical checks of the value-count and inheritance results.
    ValidateTheorems(TheoremArgs),
    /// Dirichlet random-language baseline and percentile test.
    Baseline(BaselineArgs),
    /// Count gender × number distributions in CONLL-U files.
    AnalyzeCorpus(CorpusArgs),
    /// Data series for the discriminability and distribution plots.
    PlotData(PlotArgs),
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct Source {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset: gender, numerosity, system-desk, system-full.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct InstanceArgs {
    #[command(flatten)]
    source: Source,
    /// Random starts per α.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SystemArgs {
    #[command(flatten)]
    source: Source,
    /// Seeds for stages 1, 2 and 3, e.g. `5,10,10`.
    #[arg(long, value_delimiter = ',')]
    stage_seeds: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// β values; `inf` for the size-free limit.
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<Tradeoff>>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TheoremArgs {
    /// Cells written by `simulate-system`.
    #[arg(long, conflicts_with_all = ["config", "preset"])]
    cells: Option<PathBuf>,
    /// System sweep config to run and check.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Instance sweep config whose every run is checked as well.
    #[arg(long, conflicts_with = "instance_preset")]
    instance_config: Option<PathBuf>,
    #[arg(long)]
    instance_preset: Option<String>,
    #[arg(long, value_delimiter = ',')]
    stage_seeds: Option<Vec<usize>>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, required_unless_present = "batch")]
    k: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    n: usize,
    #[arg(long, required_unless_present = "batch")]
    d_obs: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV with columns `label,k,d_obs`.
    #[arg(long, conflicts_with_all = ["k", "d_obs"])]
    batch: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long, num_args = 1.., required = true)]
    conllu: Vec<PathBuf>,
    #[arg(long)]
    language: Option<String>,
    /// Noun lemma list, or `all`.
    #[arg(long, default_value = "all")]
    nouns: String,
    /// Animate lemma list; enables the paired animate subset.
    #[arg(long)]
    animate: Option<PathBuf>,
    #[arg(long)]
    exclude_dual: bool,
    /// Pins the number of values of the overall system.
    #[arg(long)]
    inventory: Option<usize>,
    #[arg(long)]
    gender_inventory: Option<usize>,
    #[arg(long)]
    number_inventory: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    baseline_n: usize,
    #[arg(long, default_value_t = 0)]
    baseline_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Report files written by `analyze-corpus`.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 9)]
    k_max: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    baseline_n: usize,
    #[arg(long, default_value_t = 0)]
    baseline_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    subcommand: String,
    config_hash: String,
    rng_seeds: Vec<u64>,
    tool_version: String,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
    threads: usize,
    duration_secs: f64,
}

struct Run {
    subcommand: &'static str,
    started: Instant,
    config_hash: String,
    rng_seeds: Vec<u64>,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new<C: Serialize>(subcommand: &'static str, config: &C, rng_seeds: Vec<u64>) -> Result<Self> {
        // serde_json maps keep keys sorted, which canonicalizes the digest input.
        let canonical = serde_json::to_string(&serde_json::to_value(config)?)?;
        Ok(Self {
            subcommand,
            started: Instant::now(),
            config_hash: hex::encode(Sha256::digest(canonical.as_bytes())),
            rng_seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(hasher.finalize()),
        });
        Ok(())
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        write_atomic(&path, bytes)?;
        self.outputs.push(path);
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, path: PathBuf, rows: &[T]) -> Result<()> {
        let bytes = csv_bytes(rows)?;
        self.write(path, &bytes)
    }

    fn json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(path, &bytes)
    }

    fn finish(self, manifest_path: PathBuf) -> Result<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand.to_string(),
            config_hash: self.config_hash,
            rng_seeds: self.rng_seeds,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
            threads: rayon::current_num_threads(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&manifest_path, &bytes)
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn load_source<T: serde::de::DeserializeOwned>(config: Option<&Path>, preset: Option<&str>) -> Result<T> {
    match (config, preset) {
        (Some(path), _) => config::load(path),
        (None, Some(name)) => config::from_json(config::preset(name)?),
        (None, None) => Err(Error::Config {
            path: "--config".into(),
            message: "a config file or preset is required".into(),
        }),
    }
}

fn instance_config(
    source: &Source,
    seeds: Option<usize>,
    rng_seed: Option<u64>,
    max_iters: Option<usize>,
) -> Result<InstanceSweepConfig> {
    let mut cfg: InstanceSweepConfig = load_source(source.config.as_deref(), source.preset.as_deref())?;
    if let Some(n) = seeds {
        cfg.optimizer.n_seeds = n;
    }
    if let Some(s) = rng_seed {
        cfg.optimizer.rng_seed = s;
    }
    if let Some(m) = max_iters {
        cfg.optimizer.max_iters = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate_instance(args: InstanceArgs) -> Result<u8> {
    let cfg = instance_config(&args.source, args.seeds, args.rng_seed, args.max_iters)?;
    let mut run = Run::new("simulate-instance", &cfg, vec![cfg.optimizer.rng_seed])?;
    if let Some(p) = &args.source.config {
        run.input(p)?;
    }
    let sweep = run_instance_sweep(&cfg)?;
    let rows = sweep.rows();
    println!(
        "{:<8} {:>8} {:>10} {:>5}  regime",
        "alpha", "memory", "surprisal", "eff"
    );
    for r in rows.iter().filter(|r| r.best) {
        println!(
            "{:<8} {:>8.4} {:>10.4} {:>5}  {}",
            r.alpha.to_string(),
            r.memory,
            r.surprisal,
            r.effective_values,
            r.regime
        );
    }
    run.csv(args.out.join("instance.csv"), &rows)?;
    run.finish(args.out.join("manifest.json"))?;
    Ok(0)
}

fn system_config(
    source: &Source,
    stage_seeds: Option<&[usize]>,
    k: Option<Vec<usize>>,
    beta: Option<Vec<Tradeoff>>,
    rng_seed: Option<u64>,
    max_iters: Option<usize>,
) -> Result<SystemSweepConfig> {
    let mut cfg: SystemSweepConfig = load_source(source.config.as_deref(), source.preset.as_deref())?;
    if let Some(s) = stage_seeds {
        if s.len() != 3 {
            return Err(Error::Config {
                path: "--stage-seeds".into(),
                message: format!("expected three seed counts, got {}", s.len()),
            });
        }
        cfg.system = cfg.system.with_stage_seeds(s[0], s[1], s[2]);
    }
    if let Some(k) = k {
        cfg.k = k;
    }
    if let Some(b) = beta {
        cfg.beta = b;
    }
    if let Some(s) = rng_seed {
        cfg.system.optimizer.rng_seed = s;
    }
    if let Some(m) = max_iters {
        cfg.system.optimizer.max_iters = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_cells(cells: &[SystemCell]) {
    println!(
        "{:<12} {:>3} {:>6} {:>4} {:>7} {:>7} {:>8}",
        "feature", "k", "beta", "eff", "H(W)", "AgrD", "H(W|A)"
    );
    for c in cells {
        println!(
            "{:<12} {:>3} {:>6} {:>4} {:>7.4} {:>7.4} {:>8.4}",
            c.feature,
            c.k,
            c.beta.to_string(),
            c.result.effective_values,
            c.result.h_w,
            c.result.agr_d,
            c.result.consistency
        );
    }
}

fn simulate_system(args: SystemArgs) -> Result<u8> {
    let cfg = system_config(
        &args.source,
        args.stage_seeds.as_deref(),
        args.k,
        args.beta,
        args.rng_seed,
        args.max_iters,
    )?;
    let mut run = Run::new("simulate-system", &cfg, vec![cfg.system.optimizer.rng_seed])?;
    if let Some(p) = &args.source.config {
        run.input(p)?;
    }
    let cells = run_system_sweep(&cfg)?;
    print_cells(&cells);
    let rows: Vec<SystemRow> = cells.iter().map(SystemRow::from).collect();
    let referents: Vec<_> = cells
        .iter()
        .flat_map(|c| referent_rows(c, cfg.system.value_threshold))
        .collect();
    run.csv(args.out.join("system.csv"), &rows)?;
    run.csv(args.out.join("referents.csv"), &referents)?;
    run.json(args.out.join("cells.json"), &cells)?;
    run.finish(args.out.join("manifest.json"))?;
    Ok(0)
}

#[derive(Serialize)]
struct TheoremOutput<'a> {
    passed: bool,
    reports: &'a [TheoremReport],
    instance_reports: &'a [TheoremReport],
}

fn validate_theorems(args: TheoremArgs) -> Result<u8> {
    if args.tol.is_nan() || args.tol < 0.0 {
        return Err(Error::Config {
            path: "--tol".into(),
            message: "tolerance must be non-negative".into(),
        });
    }
    #[derive(Serialize)]
    struct Effective<'a> {
        system: Option<&'a SystemSweepConfig>,
        instance: Option<&'a InstanceSweepConfig>,
        tol: f64,
    }
    let (system_cfg, cells_path) = match &args.cells {
        Some(p) => (None, Some(p.clone())),
        None => {
            let source = Source {
                config: args.config.clone(),
                preset: args
                    .preset
                    .clone()
                    .or_else(|| args.config.is_none().then(|| "system-desk".into())),
            };
            (
                Some(system_config(
                    &source,
                    args.stage_seeds.as_deref(),
                    None,
                    None,
                    None,
                    None,
                )?),
                None,
            )
        }
    };
    let instance_cfg = match (&args.instance_config, &args.instance_preset) {
        (None, None) => None,
        (c, p) => {
            let source = Source {
                config: c.clone(),
                preset: p.clone(),
            };
            Some(instance_config(&source, args.seeds, None, None)?)
        }
    };
    let effective = Effective {
        system: system_cfg.as_ref(),
        instance: instance_cfg.as_ref(),
        tol: args.tol,
    };
    let mut seeds = Vec::new();
    if let Some(c) = &system_cfg {
        seeds.push(c.system.optimizer.rng_seed);
    }
    if let Some(c) = &instance_cfg {
        seeds.push(c.optimizer.rng_seed);
    }
    let mut run = Run::new("validate-theorems", &effective, seeds)?;
    for p in [&args.cells, &args.config, &args.instance_config].into_iter().flatten() {
        run.input(p)?;
    }

    let cells: Vec<SystemCell> = match (&cells_path, &system_cfg) {
        (Some(p), _) => config::load(p)?,
        (None, Some(cfg)) => run_system_sweep(cfg)?,
        (None, None) => Vec::new(),
    };
    let reports = validate_cells(&cells, args.tol);
    let instance_reports = match &instance_cfg {
        Some(cfg) => validate_instance_sweep(cfg, &run_instance_sweep(cfg)?, args.tol)?,
        None => Vec::new(),
    };
    print!("{}", render_table(&reports));
    if !instance_reports.is_empty() {
        println!("instance runs:");
        print!("{}", render_table(&instance_reports));
    }
    let passed = reports.iter().chain(&instance_reports).all(|r| r.passed);
    if let Some(out) = &args.out {
        run.json(
            out.join("theorems.json"),
            &TheoremOutput {
                passed,
                reports: &reports,
                instance_reports: &instance_reports,
            },
        )?;
        run.finish(out.join("manifest.json"))?;
    }
    Ok(if passed { 0 } else { EXIT_VIOLATION })
}

#[derive(Serialize, Deserialize)]
struct BatchRow {
    label: String,
    k: usize,
    d_obs: f64,
}

#[derive(Serialize)]
struct BaselineRow {
    label: String,
    k: usize,
    d_obs: f64,
    p_value: f64,
    verdict: Verdict,
    marker: &'static str,
}

fn baseline(args: BaselineArgs) -> Result<u8> {
    #[derive(Serialize)]
    struct Effective {
        k: Option<usize>,
        n: usize,
        d_obs: Option<f64>,
        seed: u64,
    }
    let mut run = Run::new(
        "baseline",
        &Effective {
            k: args.k,
            n: args.n,
            d_obs: args.d_obs,
            seed: args.seed,
        },
        vec![args.seed],
    )?;
    let bytes = match &args.batch {
        Some(path) => {
            run.input(path)?;
            let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::Config {
                    path: path.display().to_string(),
                    message: format!("{other:?}"),
                },
            })?;
            let mut samples = std::collections::BTreeMap::new();
            let mut rows = Vec::new();
            for (i, rec) in reader.deserialize::<BatchRow>().enumerate() {
                let rec = rec.map_err(|e| Error::Config {
                    path: format!("{}:row {}", path.display(), i + 1),
                    message: e.to_string(),
                })?;
                let sample = match samples.entry(rec.k) {
                    std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(sample_baseline(rec.k, args.n, args.seed)?)
                    }
                };
                let r = percentile_test(rec.d_obs, sample)?;
                rows.push(BaselineRow {
                    label: rec.label,
                    k: rec.k,
                    d_obs: rec.d_obs,
                    p_value: r.p_value,
                    verdict: r.verdict,
                    marker: r.verdict.marker(),
                });
            }
            csv_bytes(&rows)?
        }
        None => {
            let (k, d_obs) = (args.k.unwrap_or(0), args.d_obs.unwrap_or(f64::NAN));
            let sample = sample_baseline(k, args.n, args.seed)?;
            let r = percentile_test(d_obs, &sample)?;
            let value = serde_json::json!({
                "k": k,
                "n": args.n,
                "seed": args.seed,
                "d_obs": d_obs,
                "p_value": r.p_value,
                "verdicts": {
                    "p<0.05": r.p_value < 0.05,
                    "p<0.1": r.p_value < 0.1,
                    "verdict": r.verdict,
                    "marker": r.verdict.marker(),
                },
                "quantiles": {
                    "q05": sample.quantile(0.05),
                    "q10": sample.quantile(0.1),
                    "q50": sample.quantile(0.5),
                    "q90": sample.quantile(0.9),
                },
            });
            let mut b = serde_json::to_vec_pretty(&value)?;
            b.push(b'\n');
            b
        }
    };
    match &args.out {
        Some(path) => {
            run.write(path.clone(), &bytes)?;
            let manifest = path.with_file_name(format!(
                "{}.manifest.json",
                path.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            ));
            run.finish(manifest)?;
        }
        None => io::stdout().write_all(&bytes).map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(0)
}

fn analyze_corpus(args: CorpusArgs) -> Result<u8> {
    #[derive(Serialize)]
    struct Effective<'a> {
        language: &'a str,
        nouns: &'a str,
        animate: Option<&'a Path>,
        report: &'a ReportConfig,
    }
    let language = args.language.clone().unwrap_or_else(|| {
        let name = args.conllu[0]
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        name.split('.').next().unwrap_or("corpus").to_string()
    });
    let report_cfg = ReportConfig {
        baseline_n: args.baseline_n,
        baseline_seed: args.baseline_seed,
        exclude_dual: args.exclude_dual,
        inventory: Inventory {
            gender: args.gender_inventory,
            number: args.number_inventory,
            overall: args.inventory,
        },
    };
    let mut run = Run::new(
        "analyze-corpus",
        &Effective {
            language: &language,
            nouns: &args.nouns,
            animate: args.animate.as_deref(),
            report: &report_cfg,
        },
        vec![args.baseline_seed],
    )?;
    let nouns = if args.nouns == "all" {
        Allowlist::All
    } else {
        let p = PathBuf::from(&args.nouns);
        run.input(&p)?;
        Allowlist::load(&p)?
    };
    let animate = match &args.animate {
        Some(p) => {
            run.input(p)?;
            Some(Allowlist::load(p)?)
        }
        None => None,
    };
    for p in &args.conllu {
        run.input(p)?;
    }

    let parts: Vec<(GrammarCountTable, ParseStats)> = args
        .conllu
        .par_iter()
        .map(|p| {
            let mut reader = open_conllu(p)?;
            let table = build_counts(reader.by_ref(), &nouns, None);
            let stats = reader.finish()?;
            Ok((table, stats))
        })
        .collect::<Result<_>>()?;
    let mut all = GrammarCountTable::new(language.clone(), "all");
    let mut stats = Vec::new();
    for (path, (table, s)) in args.conllu.iter().zip(&parts) {
        all.merge(table);
        stats.push(serde_json::json!({ "path": path, "stats": s }));
    }
    let mut tables = vec![all];
    if let Some(animate) = &animate {
        tables.push(build_animate_pairs(&tables[0], animate, &PairingRule::default()));
    }
    let mut reports: Vec<LanguageReport> = Vec::new();
    for t in &tables {
        let mut csv = Vec::new();
        t.write_csv(&mut csv)?;
        run.write(args.out.join(format!("counts_{}.csv", t.subset)), &csv)?;
        if t.total_tokens() > 0 {
            reports.push(report(t, &report_cfg)?);
        } else {
            eprintln!("warning: no tokens in subset {}", t.subset);
        }
    }
    if reports.is_empty() {
        return Err(Error::Validation(format!("no noun tokens counted for {language}")));
    }
    for r in &reports {
        let show = |f: &Option<gramopt::corpus::FeatureReport>| match f {
            Some(f) => format!(
                "{}v h={:.3} d={:.3}{}",
                f.n_values,
                f.h,
                f.d_kl,
                f.verdict.map_or("", |v| v.marker())
            ),
            None => "∅".to_string(),
        };
        println!(
            "{} {} tokens={} gender[{}] number[{}] overall[{}]",
            r.language,
            r.subset,
            r.tokens,
            show(&r.gender),
            show(&r.number),
            show(&r.overall)
        );
    }
    run.json(args.out.join("report.json"), &reports)?;
    run.json(args.out.join("parse_stats.json"), &stats)?;
    run.finish(args.out.join("manifest.json"))?;
    Ok(0)
}

#[derive(Serialize)]
struct CurveRow {
    k: usize,
    h: f64,
    agr_d: f64,
}

#[derive(Serialize)]
struct PointRow {
    language: String,
    subset: String,
    feature: &'static str,
    n_values: usize,
    h: f64,
    agr_d: f64,
    d_kl: String,
    p_value: Option<f64>,
    marker: &'static str,
}

#[derive(Serialize)]
struct BandRow {
    k: usize,
    d_kl_q05: f64,
    d_kl_q10: f64,
    d_kl_q50: f64,
    d_kl_q90: f64,
}

#[derive(Serialize)]
struct CellRow {
    language: String,
    subset: String,
    value: String,
    prob: f64,
}

fn plot_data(args: PlotArgs) -> Result<u8> {
    if args.k_min < 2 || args.k_max < args.k_min {
        return Err(Error::Config {
            path: "--k-min/--k-max".into(),
            message: "need 2 <= k_min <= k_max".into(),
        });
    }
    #[derive(Serialize)]
    struct Effective {
        k_min: usize,
        k_max: usize,
        baseline_n: usize,
        baseline_seed: u64,
    }
    let mut run = Run::new(
        "plot-data",
        &Effective {
            k_min: args.k_min,
            k_max: args.k_max,
            baseline_n: args.baseline_n,
            baseline_seed: args.baseline_seed,
        },
        vec![args.baseline_seed],
    )?;
    let mut reports: Vec<LanguageReport> = Vec::new();
    for p in &args.reports {
        if !p.is_file() {
            return Err(Error::Config {
                path: p.display().to_string(),
                message: "report file not found".into(),
            });
        }
        run.input(p)?;
        reports.extend(config::load::<Vec<LanguageReport>>(p)?);
    }
    let curve: Vec<CurveRow> = (args.k_min..=args.k_max)
        .map(|k| CurveRow {
            k,
            h: (k as f64).log2(),
            agr_d: 1.0 - 1.0 / k as f64,
        })
        .collect();
    let mut points = Vec::new();
    let mut cells = Vec::new();
    for r in &reports {
        for (name, f) in [("gender", &r.gender), ("number", &r.number), ("overall", &r.overall)] {
            if let Some(f) = f {
                points.push(PointRow {
                    language: r.language.clone(),
                    subset: r.subset.clone(),
                    feature: name,
                    n_values: f.n_values,
                    h: f.h,
                    agr_d: f.agr_d,
                    d_kl: if f.d_kl.is_finite() {
                        f.d_kl.to_string()
                    } else {
                        "inf".into()
                    },
                    p_value: f.p_value,
                    marker: f.verdict.map_or("", |v| v.marker()),
                });
            }
        }
        if let Some(f) = &r.overall {
            for (v, p) in f.values.iter().zip(&f.probs) {
                cells.push(CellRow {
                    language: r.language.clone(),
                    subset: r.subset.clone(),
                    value: v.clone(),
                    prob: *p,
                });
            }
        }
    }
    let bands: Vec<BandRow> = (args.k_min..=args.k_max)
        .into_par_iter()
        .map(|k| {
            let s = sample_baseline(k, args.baseline_n, args.baseline_seed)?;
            Ok(BandRow {
                k,
                d_kl_q05: s.quantile(0.05),
                d_kl_q10: s.quantile(0.1),
                d_kl_q50: s.quantile(0.5),
                d_kl_q90: s.quantile(0.9),
            })
        })
        .collect::<Result<_>>()?;
    run.csv(args.out.join("optimal_curve.csv"), &curve)?;
    run.csv(args.out.join("language_points.csv"), &points)?;
    run.csv(args.out.join("baseline_bands.csv"), &bands)?;
    run.csv(args.out.join("cell_probs.csv"), &cells)?;
    run.finish(args.out.join("manifest.json"))?;
    Ok(0)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Config { .. } | Error::Json(_) => EXIT_USAGE,
        Error::Io { .. } | Error::Csv(_) | Error::Malformed { .. } => EXIT_IO,
        Error::NonFinite { .. } | Error::NoConvergedRun(_) => EXIT_VIOLATION,
        Error::Stage { source, .. } => exit_code(source),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::SimulateInstance(a) => simulate_instance(a),
        Command::SimulateSystem(a) => simulate_system(a),
        Command::ValidateTheorems(a) => validate_theorems(a),
        Command::Baseline(a) => baseline(a),
        Command::AnalyzeCorpus(a) => analyze_corpus(a),
        Command::PlotData(a) => plot_data(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
