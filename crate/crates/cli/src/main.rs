use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use genaug::augment::{apply_logged, Augmentation, ChildSpec, RngStream};
use genaug::error::{Error, Result};
use genaug::eval::{evaluate_zoo, DEFAULT_K};
use genaug::metric::{load_penalty_config, score_model, MetricReport};
use genaug::nn::load_model;
use genaug::ppm::{decode_ppm, save_ppm};
use genaug::tensor::Image;
use genaug::zoo::{
    decode_dataset, generate_synthetic_zoo, load_dataset, load_zoo_manifest, save_dataset,
    texture_shape_dataset, Split, ZooGrid,
};

/// Augmentation-robustness generalization metric.
///
/// Exit codes: 0 success, 2 invalid input or usage, 3 numerical failure.
#[derive(Parser)]
#[command(name = "genaug", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GENAUG_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply one augmentation to an image and print the drawn parameters.
    Augment(AugmentArgs),
    /// Score a model over a dataset with a penalty config.
    Score(ScoreArgs),
    /// Evaluate metric reports against a zoo's generalization gaps.
    Eval(EvalArgs),
    /// Train a synthetic model zoo.
    ZooGen(ZooGenArgs),
}

#[derive(Args)]
struct AugmentArgs {
    /// PPM/PGM image, or a dataset container (see --index).
    #[arg(long = "in")]
    input: PathBuf,
    /// Sample to take when the input is a dataset container.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Augmentation kind; join kinds with `+` to compose them.
    #[arg(long)]
    op: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameter override `key=value`, repeatable.
    #[arg(long = "param", value_name = "K=V")]
    params: Vec<String>,
    /// Model manifest, required by `vap`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output PPM (3 channels) or PGM (1 channel).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Penalty config JSON, or `preset:<name>`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Report id (default: model manifest file stem).
    #[arg(long)]
    model_id: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    zoo: PathBuf,
    /// Directory holding `<model_id>.json` metric reports.
    #[arg(long)]
    reports: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ZooGenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Grid JSON; omitted fields take the default grid's values.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Augment(a) => cmd_augment(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ZooGen(a) => cmd_zoo_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io { path: path.into(), source })
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn parse_param_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn build_op(op: &str, params: &[String]) -> Result<Augmentation> {
    let mut map = Map::new();
    for p in params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--param {p:?} is not key=value")))?;
        map.insert(k.trim().to_string(), parse_param_value(v.trim()));
    }
    if op.contains('+') {
        if !map.is_empty() {
            return Err(Error::InvalidConfig("--param is not supported for composed ops".into()));
        }
        let children: Vec<ChildSpec> = op.split('+').map(|k| ChildSpec::Name(k.trim().into())).collect();
        return Augmentation::from_parts("compose", None, Some(&children));
    }
    let params = (!map.is_empty()).then_some(Value::Object(map));
    Augmentation::from_parts(op, params.as_ref(), None)
}

fn read_input_image(path: &Path, index: usize) -> Result<Image> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(b"P6") || bytes.starts_with(b"P5") {
        return decode_ppm(&bytes);
    }
    let data = decode_dataset(&bytes)?;
    data.images().get(index).cloned().ok_or_else(|| {
        Error::InvalidDataset(format!("--index {index} out of range for {} images", data.len()))
    })
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let aug = build_op(&a.op, &a.params)?;
    let img = read_input_image(&a.input, a.index)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    if aug.needs_model() && model.is_none() {
        return Err(Error::InvalidConfig(format!("--op {} needs --model", a.op)));
    }
    let mut rng = RngStream::new(a.seed);
    let mut drawn = Vec::new();
    let out = apply_logged(&aug, &img, model.as_ref(), &mut rng, Some(&mut drawn))?;
    save_ppm(&a.out, &out)?;
    let drawn: Map<String, Value> = drawn.into_iter().map(|d| (d.name, json!(d.value))).collect();
    print_json(&json!({
        "format_version": 1,
        "op": aug.name(),
        "seed": a.seed,
        "drawn": drawn,
        "out": a.out,
    }));
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let config = load_penalty_config(&a.config)?;
    let mut report = score_model(&model, &data, &config)?;
    report.model_id = Some(match a.model_id {
        Some(id) => id,
        None => a
            .model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::InvalidConfig("cannot derive model id; pass --model-id".into()))?,
    });
    write_text(&a.out, &report.to_json_string()?)?;
    print_json(&json!({
        "model_id": report.model_id,
        "seed": report.seed,
        "samples_scored": report.samples_scored,
        "truncated": report.truncated,
        "phi_total": report.phi_total,
        "phi_per_sample": report.phi_per_sample,
    }));
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let manifest = load_zoo_manifest(&a.zoo)?;
    let reports = manifest
        .entries
        .iter()
        .map(|e| {
            let path = a.reports.join(format!("{}.json", e.model_id));
            if !path.is_file() {
                return Err(Error::Evaluation(format!(
                    "missing metric report for model_id {:?} ({})",
                    e.model_id,
                    path.display()
                )));
            }
            let mut r: MetricReport = serde_json::from_slice(&read_bytes(&path)?)
                .map_err(|err| Error::Evaluation(format!("{}: {err}", path.display())))?;
            match &r.model_id {
                Some(id) if id != &e.model_id => {
                    return Err(Error::Evaluation(format!(
                        "{} holds model_id {id:?}, expected {:?}",
                        path.display(),
                        e.model_id
                    )))
                }
                Some(_) => {}
                None => r.model_id = Some(e.model_id.clone()),
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_zoo(&manifest, &reports, a.k)?;
    write_text(&a.out, &report.to_json_string()?)?;
    print_json(&json!({
        "cmi_score": report.cmi.as_ref().map(|c| c.score),
        "cmi_unavailable": report.cmi_unavailable,
        "k": a.k,
        "kendall_tau": report.kendall_tau,
        "n_models": report.n_models,
        "n_pairs_used": report.n_pairs_used,
    }));
    Ok(())
}

fn cmd_zoo_gen(a: ZooGenArgs) -> Result<()> {
    let grid: ZooGrid = match &a.grid {
        Some(p) => serde_json::from_slice(&read_bytes(p)?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?,
        None => ZooGrid::default(),
    };
    grid.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io { path: a.out.clone(), source })?;
    let train = texture_shape_dataset(grid.train_size, a.seed, Split::Train)?;
    let test = texture_shape_dataset(grid.test_size, a.seed, Split::Test)?;
    save_dataset(a.out.join("train.gads"), &train)?;
    save_dataset(a.out.join("test.gads"), &test)?;
    let manifest = generate_synthetic_zoo(&grid, a.seed, &train, &test, &a.out)?;
    let mean = |f: fn(&genaug::zoo::ZooManifestEntry) -> f64| {
        manifest.entries.iter().map(f).sum::<f64>() / manifest.entries.len() as f64
    };
    print_json(&json!({
        "format_version": 1,
        "seed": a.seed,
        "n_models": manifest.entries.len(),
        "axes": manifest.axes,
        "mean_train_acc": mean(|e| e.train_acc),
        "mean_test_acc": mean(|e| e.test_acc),
        "zoo": a.out.join("zoo.json"),
        "train": a.out.join("train.gads"),
        "test": a.out.join("test.gads"),
    }));
    Ok(())
}
