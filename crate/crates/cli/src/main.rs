use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use esg_forge::arithmetic::{
    apply_residual, extract_residual, merge_lora, IrmOptions, LoraAdapter, OutputDType,
    ResidualDelta,
};
use esg_forge::checkpoint::{load_checkpoint, save_checkpoint, validate_alignment, NamedTensorMap};
use esg_forge::dataset::{load_triplets, stratified_split, write_split, FieldMap, SplitSpec};
use esg_forge::embedding::{default_embedders, EmbedderConfig};
use esg_forge::harness::{
    assign_ranks, emit_reports, kendall_tau, read_row, run_eval, Mode, RankTable, RunConfig,
    RunEnv, RunManifest, RunOptions,
};
use esg_forge::retrieval::build_index;
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_PARTIAL: u8 = 2;
const EXIT_USAGE: u8 = 1;
const EXIT_FATAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "esg-forge",
    version,
    about = "Checkpoint arithmetic and ESG-QA evaluation"
)]
struct Cli {
    /// Log filter, e.g. `info` or `esg_forge=debug`. Overrides RUST_LOG.
    #[arg(long, global = true)]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fold a low-rank adapter into a base checkpoint.
    MergeLora {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        adapter: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scaling numerator; defaults to adapter metadata.
        #[arg(long)]
        alpha: Option<f32>,
    },
    /// Write the instruction residual `inst - base`.
    IrmExtract {
        #[arg(long)]
        inst: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        irm: IrmArgs,
    },
    /// Add a residual to an adapted base checkpoint.
    IrmApply {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        delta: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        irm: IrmArgs,
    },
    /// Compare two checkpoints tensor by tensor.
    CkptDiff { a: PathBuf, b: PathBuf },
    /// Stratified train/val/test split of a JSONL dataset.
    SplitData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run config supplying `fields` (key names and pillar aliases).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Embed the contexts of a dataset into a retrieval index.
    BuildIndex {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run config supplying `embedder` and `fields`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one model over a dataset in one mode.
    Eval(EvalArgs),
    /// Rank rows of a CSV of metric values.
    Rank {
        #[arg(long)]
        input: PathBuf,
        /// Metric columns; defaults to every generative column present.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        /// Column with reference ranks to compare against (Kendall tau).
        #[arg(long)]
        compare: Option<String>,
    },
    /// Combine `row.json` files from several runs into report tables.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        rows: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct IrmArgs {
    /// Skip tensors present on one side only.
    #[arg(long)]
    ignore_missing: bool,
    /// Output dtype: match, f32, f16 or bf16.
    #[arg(long, default_value = "match")]
    dtype: String,
    #[arg(long)]
    fail_on_nonfinite: bool,
}

impl IrmArgs {
    fn options(&self) -> Result<IrmOptions> {
        let output_dtype: OutputDType = self.dtype.parse().map_err(anyhow::Error::msg)?;
        Ok(IrmOptions {
            ignore_missing: self.ignore_missing,
            output_dtype,
            fail_on_nonfinite: self.fail_on_nonfinite,
        })
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// kg CO2eq per kWh.
    #[arg(long)]
    intensity: Option<f64>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the journal in the output directory.
    #[arg(long)]
    resume: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_tracing(cli.log.as_deref());
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}

fn init_tracing(filter: Option<&str>) {
    use tracing_subscriber::EnvFilter;
    let filter = match filter {
        Some(f) => EnvFilter::new(f),
        None => EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn load(path: &Path) -> Result<NamedTensorMap> {
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn fields_from(config: Option<&Path>) -> Result<(FieldMap, EmbedderConfig)> {
    match config {
        Some(p) => {
            let c = RunConfig::load(p)?;
            Ok((c.fields, c.embedder))
        }
        None => Ok((FieldMap::default(), EmbedderConfig::default())),
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::MergeLora {
            base,
            adapter,
            out,
            alpha,
        } => {
            let base = load(&base)?;
            let adapter = LoraAdapter::from_checkpoint(&load(&adapter)?, alpha)?;
            let merged = merge_lora(&base, &adapter)?;
            save_checkpoint(&merged, &out)?;
            print_json(&json!({ "out": out, "tensors": merged.len() }));
        }
        Command::IrmExtract {
            inst,
            base,
            out,
            irm,
        } => {
            let delta = extract_residual(&load(&inst)?, &load(&base)?, &irm.options()?)?;
            save_checkpoint(delta.as_map(), &out)?;
            print_json(&json!({ "out": out, "tensors": delta.as_map().len() }));
        }
        Command::IrmApply {
            base,
            delta,
            out,
            irm,
        } => {
            let delta = ResidualDelta::from_map(load(&delta)?);
            let (result, summary) = apply_residual(&load(&base)?, &delta, &irm.options()?)?;
            save_checkpoint(&result, &out)?;
            print_json(&json!({ "out": out, "summary": summary }));
        }
        Command::CkptDiff { a, b } => {
            let (a, b) = (load(&a)?, load(&b)?);
            let report = validate_alignment(&a, &b);
            let mut max_abs = BTreeMap::new();
            for spec in a.specs() {
                let Some(other) = b.spec(&spec.name) else {
                    continue;
                };
                if other.shape != spec.shape {
                    continue;
                }
                let x = a.to_f32(&spec.name).expect("present");
                let y = b.to_f32(&spec.name).expect("present");
                let d = x
                    .iter()
                    .zip(&y)
                    .map(|(p, q)| (p - q).abs())
                    .fold(0f32, f32::max);
                max_abs.insert(spec.name.clone(), d);
            }
            print_json(&json!({ "alignment": report, "max_abs_diff": max_abs }));
        }
        Command::SplitData {
            input,
            out,
            seed,
            config,
        } => {
            let (fields, _) = fields_from(config.as_deref())?;
            let items = load_triplets(&input, &fields)?;
            let spec = SplitSpec::standard(seed);
            let partition = stratified_split(&items, &spec)?;
            let manifest = write_split(&out, &partition, &spec)?;
            print_json(&serde_json::to_value(manifest)?);
        }
        Command::BuildIndex { input, out, config } => {
            let (fields, embedder_cfg) = fields_from(config.as_deref())?;
            let items = load_triplets(&input, &fields)?;
            let mut seen = std::collections::HashSet::new();
            let contexts: Vec<(String, String)> = items
                .iter()
                .filter(|it| !it.context.trim().is_empty() && seen.insert(it.context.clone()))
                .map(|it| (it.id.clone(), it.context.clone()))
                .collect();
            let embedder = default_embedders().build(&embedder_cfg.kind, &embedder_cfg)?;
            let index = build_index(&contexts, embedder.as_ref(), embedder_cfg.batch_size)?;
            let map: BTreeMap<String, String> = contexts.into_iter().collect();
            index.save(&out, Some(&map))?;
            print_json(&serde_json::to_value(index.manifest())?);
        }
        Command::Eval(args) => return eval(args),
        Command::Rank {
            input,
            columns,
            compare,
        } => {
            let table = RankTable::from_csv(&input, &columns)?;
            let outcome = table.rank();
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["model", "mean_rank", "rank"])?;
            for (i, label) in table.labels.iter().enumerate() {
                w.write_record([
                    label.clone(),
                    outcome.mean_ranks[i]
                        .map(|m| format!("{m:.3}"))
                        .unwrap_or_default(),
                    outcome.ranks[i].map(|r| r.to_string()).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            if let Some(col) = compare {
                let reference = RankTable::from_csv(&input, &[col])?;
                let (mut ours, mut theirs) = (Vec::new(), Vec::new());
                for (i, r) in outcome.ranks.iter().enumerate() {
                    if let (Some(r), Some(p)) = (r, reference.values[i][0]) {
                        ours.push(*r as f64);
                        theirs.push(p);
                    }
                }
                eprintln!("kendall_tau={:.4}", kendall_tau(&ours, &theirs));
            }
            if !outcome.excluded.is_empty() {
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::Report { rows, out } => {
            let mut loaded = rows
                .iter()
                .map(|p| read_row(p))
                .collect::<Result<Vec<_>, _>>()?;
            assign_ranks(&mut loaded);
            emit_reports(&out, &loaded, None, None)?;
            if loaded.iter().any(|r| r.n_failed > 0) {
                return Ok(EXIT_PARTIAL);
            }
        }
    }
    Ok(0)
}

fn eval(args: EvalArgs) -> Result<u8> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(m) = &args.mode {
        config.mode = m.parse::<Mode>()?;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(i) = args.intensity {
        config.energy.intensity = Some(i);
    }
    if args.dataset.is_some() {
        config.dataset = args.dataset;
    }
    if args.index.is_some() {
        config.index = args.index;
    }
    if args.out.is_some() {
        config.output_dir = args.out;
    }
    if !config.mode.needs_index() {
        config.index = None;
    }
    config.validate()?;
    let Some(dataset) = config.dataset.clone() else {
        bail!("no dataset: set `dataset` in the config or pass --dataset");
    };
    let Some(out) = config.output_dir.clone() else {
        bail!("no output directory: set `output_dir` in the config or pass --out");
    };
    let bytes =
        std::fs::read(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let dataset_sha = {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(&bytes))
    };
    let items = load_triplets(&dataset, &config.fields)?;
    if items.is_empty() {
        bail!("dataset {} has no items", dataset.display());
    }
    let env = RunEnv::from_config(&config)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let options = RunOptions {
        journal: Some(out.join("journal.jsonl")),
        resume: args.resume,
    };
    let outcome = run_eval(&config, &items, &env, &options)?;
    let manifest = RunManifest::new(&config, &env, dataset_sha);
    emit_reports(
        &out,
        std::slice::from_ref(&outcome.row),
        Some(&outcome.transcripts),
        Some(&manifest),
    )?;
    let row = &outcome.row;
    print_json(&json!({
        "model": row.model_label,
        "mode": row.mode,
        "items": row.n_items,
        "failed": row.n_failed,
        "resumed": outcome.resumed,
        "scores": row.scores,
        "energy_kwh": row.consumption.energy_kwh,
        "co2_kg": row.consumption.co2_kg,
    }));
    Ok(if row.n_failed > 0 { EXIT_PARTIAL } else { 0 })
}
