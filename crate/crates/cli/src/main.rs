//! `imrank`: generate worlds, re-rank, evaluate, run ablations and check the
//! optimized kernels against the brute-force oracle.
//!
//! Exit codes: 0 ok, 1 oracle mismatch, 2 config error, 3 data error,
//! 4 protocol error (no evaluable queries).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use imrank_core::ablation::{run_ablation, AblationConfig, Variant};
use imrank_core::artifacts::{load_matrix, read_artifact_manifest, save_matrices};
use imrank_core::bundle_io::{load_bundle, save_bundle_with_config};
use imrank_core::checks::{run_checks, CheckConfig};
use imrank_core::eval::{evaluate, EvalSetting, MaskRules};
use imrank_core::feasibility::{WeightMode, DEFAULT_M};
use imrank_core::kreciprocal::DEFAULT_K;
use imrank_core::pipeline::{prepare_bundle, rerank, RerankConfig};
use imrank_core::synth::{generate_world, WorldConfig};
use imrank_core::{EmbeddingBundle, Error, Mode};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "imrank", version, about = "Intermediary-matching re-ranking for clothes-changing re-id")]
struct Cli {
    /// Worker thread cap (0 = all cores). Never changes results.
    #[arg(long, global = true, env = "IMRANK_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic bundle.
    Gen(GenArgs),
    /// Re-rank a bundle and write every route, weight and fused matrix.
    Rerank(RerankArgs),
    /// Evaluate a distance artifact under the retrieval protocols.
    Eval(EvalArgs),
    /// Run the method ladder over the stress variants.
    Ablate(AblateArgs),
    /// Compare the optimized kernels with the brute-force oracle.
    OracleCheck(OracleArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    ids: Option<usize>,
    #[arg(long)]
    clothes: Option<usize>,
    #[arg(long)]
    per: Option<usize>,
    #[arg(long)]
    cameras: Option<usize>,
    /// Sets all three feature dimensions.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    d_o: Option<usize>,
    #[arg(long)]
    d_ir: Option<usize>,
    #[arg(long)]
    d_re: Option<usize>,
    #[arg(long)]
    clothes_offset: Option<f64>,
    #[arg(long)]
    common_component: Option<f64>,
    #[arg(long)]
    sigma_ir: Option<f64>,
    #[arg(long)]
    sigma_re: Option<f64>,
    #[arg(long)]
    sigma_o: Option<f64>,
    #[arg(long)]
    degrade_fraction: Option<f64>,
    #[arg(long)]
    degrade_strength: Option<f64>,
    #[arg(long)]
    drop_same_clothes: Option<f64>,
    #[arg(long)]
    query_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start from the acceptance world instead of the defaults.
    #[arg(long)]
    acceptance: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct RerankOpts {
    #[arg(long, value_enum, default_value_t = ModeArg::Kr)]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_M)]
    m_intermediaries: usize,
    /// `dynamic` or `fixed:a,b,c`.
    #[arg(long, default_value = "dynamic")]
    weights: String,
    /// Keep `d_direct` in `[0, 2]` instead of halving it before fusion.
    #[arg(long)]
    no_rescale_direct: bool,
    /// Treat every reliability as 1.
    #[arg(long)]
    no_reliability: bool,
    /// Half-k reciprocal-set expansion (kr only).
    #[arg(long)]
    expand: bool,
}

#[derive(Args, Debug)]
struct RerankArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[command(flatten)]
    opts: RerankOpts,
    #[arg(long)]
    out: PathBuf,
    /// Also write CSV copies of every matrix.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Artifact directory written by `rerank`.
    #[arg(long)]
    artifacts: PathBuf,
    #[arg(long, default_value = "d_star")]
    matrix: String,
    /// general, sc or cc; repeatable. Defaults to all three.
    #[arg(long = "setting")]
    settings: Vec<String>,
    /// Keep same-identity gallery samples from the query's camera.
    #[arg(long)]
    keep_same_camera: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[command(flatten)]
    opts: RerankOpts,
    #[arg(long, default_value_t = 1.0)]
    drop_same_clothes: f64,
    #[arg(long, default_value_t = 0.5)]
    drop_top_reliability: f64,
    #[arg(long = "setting")]
    settings: Vec<String>,
    #[arg(long)]
    keep_same_camera: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Number of seeds, starting at 0.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Sample counts (multiples of 10).
    #[arg(long, value_delimiter = ',', default_values_t = vec![60usize, 200])]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![5usize, 20])]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_enum, default_values_t = vec![ModeArg::Kr, ModeArg::Gnn])]
    mode: Vec<ModeArg>,
    #[arg(long, default_value_t = imrank_core::checks::DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    Kr,
    Gnn,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Kr => Mode::Kr,
            ModeArg::Gnn => Mode::Gnn,
        }
    }
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::ConfigInvalid { .. } | Error::OutOfRange { .. } | Error::KTooLarge { .. } => 2,
            Error::NoEvaluableQueries => 4,
            _ => 3,
        };
        let mut message = e.to_string();
        if let Error::InvalidBundle(v) = &e {
            message = v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("\n");
            message.insert_str(0, "bundle failed validation:\n");
        }
        Failure { code, message }
    }
}

type CmdResult = Result<u8, Failure>;

fn config_error(field: &str, reason: impl Into<String>) -> Failure {
    Error::ConfigInvalid {
        field: field.into(),
        reason: reason.into(),
    }
    .into()
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io { path: dir.into(), source: e }))?;
    }
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e }.into())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let mut cfg = if a.acceptance {
        WorldConfig::acceptance(a.seed)
    } else {
        WorldConfig {
            seed: a.seed,
            ..WorldConfig::default()
        }
    };
    macro_rules! set {
        ($($field:ident <- $arg:expr),* $(,)?) => { $(if let Some(v) = $arg { cfg.$field = v; })* };
    }
    set!(
        n_identities <- a.ids,
        clothes_per_identity <- a.clothes,
        samples_per_clothes <- a.per,
        n_cameras <- a.cameras,
        d_o <- a.dim,
        d_ir <- a.dim,
        d_re <- a.dim,
        d_o <- a.d_o,
        d_ir <- a.d_ir,
        d_re <- a.d_re,
        clothes_offset <- a.clothes_offset,
        common_component <- a.common_component,
        sigma_ir <- a.sigma_ir,
        sigma_re <- a.sigma_re,
        sigma_o <- a.sigma_o,
        degrade_fraction <- a.degrade_fraction,
        degrade_strength <- a.degrade_strength,
        drop_same_clothes_fraction <- a.drop_same_clothes,
        query_fraction <- a.query_fraction,
    );
    let (bundle, _truth) = generate_world(&cfg)?;
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    save_bundle_with_config(&bundle, &a.out, Some(echo))?;
    println!(
        "wrote {} samples ({} queries, {} gallery) to {}",
        bundle.len(),
        bundle.query_indices().len(),
        bundle.gallery_indices().len(),
        a.out.display()
    );
    Ok(0)
}

fn rerank_config(o: &RerankOpts) -> Result<RerankConfig, Failure> {
    let weights: WeightMode = o.weights.parse()?;
    Ok(RerankConfig {
        mode: o.mode.into(),
        k: o.k,
        m_intermediaries: o.m_intermediaries,
        weights,
        rescale_direct: !o.no_rescale_direct,
        use_reliability: !o.no_reliability,
        expand: o.expand,
    })
}

fn load_prepared(path: &Path) -> Result<EmbeddingBundle, Failure> {
    Ok(prepare_bundle(&load_bundle(path)?)?)
}

fn cmd_rerank(a: RerankArgs) -> CmdResult {
    let cfg = rerank_config(&a.opts)?;
    let bundle = load_prepared(&a.bundle)?;
    let out = rerank(&bundle, &cfg)?;
    let echo = json!({
        "bundle": a.bundle.display().to_string(),
        "rerank": cfg,
    });
    let manifest = save_matrices(&a.out, &out.named(), echo, a.csv)?;
    println!(
        "wrote {} matrices ({} x {}) to {}",
        manifest.matrices.len(),
        out.fused.rows(),
        out.fused.cols(),
        a.out.display()
    );
    Ok(0)
}

fn parse_settings(raw: &[String]) -> Result<Vec<EvalSetting>, Failure> {
    if raw.is_empty() {
        return Ok(EvalSetting::ALL.to_vec());
    }
    raw.iter().map(|s| s.parse().map_err(Failure::from)).collect()
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let settings = parse_settings(&a.settings)?;
    let rules = MaskRules {
        exclude_same_camera: !a.keep_same_camera,
    };
    let bundle = load_bundle(&a.bundle)?;
    let d = load_matrix(&a.artifacts, &a.matrix)?;
    if d.row_ids() != bundle.query_indices().as_slice() || d.col_ids() != bundle.gallery_indices().as_slice() {
        return Err(Error::DimMismatch {
            context: format!("{} axes versus bundle query/gallery split", a.matrix),
            expected: bundle.query_indices().len() * bundle.gallery_indices().len(),
            found: d.rows() * d.cols(),
        }
        .into());
    }
    let source = read_artifact_manifest(&a.artifacts)?.config;
    let mut reports = Vec::new();
    for setting in settings {
        let mut r = match evaluate(&bundle, &d, setting, rules) {
            Ok(r) => r,
            Err(Error::NoEvaluableQueries) => {
                return Err(Failure {
                    code: 4,
                    message: format!("setting {setting}: no query has a positive gallery sample after masking"),
                })
            }
            Err(e) => return Err(e.into()),
        };
        r.config.insert("bundle".into(), a.bundle.display().to_string());
        r.config.insert("artifacts".into(), a.artifacts.display().to_string());
        r.config.insert("matrix".into(), a.matrix.clone());
        r.config.insert("exclude_same_camera".into(), rules.exclude_same_camera.to_string());
        r.config.insert("source".into(), source.to_string());
        println!(
            "{:<8} top1 {:.4}  top5 {:.4}  top10 {:.4}  mAP {:.4}  ({} queries, {} dropped)",
            setting.to_string(),
            r.top1,
            r.top5,
            r.top10,
            r.map,
            r.n_queries_evaluated,
            r.n_queries_dropped
        );
        reports.push(r);
    }
    if let Some(out) = &a.out {
        write_text(out, &to_json(&json!({ "reports": reports })))?;
    }
    Ok(0)
}

fn cmd_ablate(a: AblateArgs) -> CmdResult {
    let rerank = rerank_config(&a.opts)?;
    for (field, v) in [
        ("drop_same_clothes", a.drop_same_clothes),
        ("drop_top_reliability", a.drop_top_reliability),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(config_error(field, format!("{v} outside [0, 1]")));
        }
    }
    let cfg = AblationConfig {
        rerank,
        variants: vec![
            Variant::Baseline,
            Variant::DropSameClothes {
                fraction: a.drop_same_clothes,
            },
            Variant::DropTopReliability {
                fraction: a.drop_top_reliability,
            },
        ],
        settings: parse_settings(&a.settings)?,
        rules: MaskRules {
            exclude_same_camera: !a.keep_same_camera,
        },
        seed: a.seed,
    };
    let bundle = load_prepared(&a.bundle)?;
    let table = run_ablation(&bundle, &cfg)?;
    print!("{}", table.to_text());
    if let Some(out) = &a.out {
        let mut v: Value = serde_json::from_str(&table.to_json()).expect("table is json");
        v["bundle"] = json!(a.bundle.display().to_string());
        write_text(out, &to_json(&v))?;
    }
    Ok(0)
}

fn cmd_oracle_check(a: OracleArgs) -> CmdResult {
    if a.seeds == 0 {
        return Err(config_error("seeds", "must be positive"));
    }
    let cfg = CheckConfig {
        seeds: (0..a.seeds).collect(),
        sizes: a.n,
        ks: a.k,
        modes: a.mode.into_iter().map(Mode::from).collect(),
        tolerance: a.tolerance,
        inject_fault: a.inject_fault,
        ..CheckConfig::default()
    };
    let summary = run_checks(&cfg)?;
    let failed = summary.cases.iter().filter(|c| !c.report.pass).count();
    println!("{} cases, {} failed; worst: {}", summary.cases.len(), failed, summary.worst);
    for c in summary.cases.iter().filter(|c| !c.report.pass) {
        println!("  seed {} n {} k {} {}: {}", c.seed, c.n, c.k, c.mode, c.report);
    }
    if let Some(out) = &a.out {
        write_text(out, &to_json(&summary))?;
    }
    Ok(if summary.pass { 0 } else { 1 })
}

fn run(cli: Cli) -> CmdResult {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| config_error("threads", e.to_string()))?;
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Rerank(a) => cmd_rerank(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::OracleCheck(a) => cmd_oracle_check(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
