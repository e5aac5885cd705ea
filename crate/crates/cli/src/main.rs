use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xmhash_core::bundle::{load_model, save_model_with};
use xmhash_core::config::parse_config;
use xmhash_core::diagnostic::bilipschitz_diagnostic;
use xmhash_core::eval::{evaluate, rank, Database};
use xmhash_core::io::{read_codes, read_matrix, write_atomic, write_codes, write_matrix};
use xmhash_core::model::orthogonality_defect;
use xmhash_core::synth::{generate, SynthSpec};
use xmhash_core::{train_from_raw, Error, FeatureMatrix, LabelMatrix, Modality, Result, Task};

#[derive(Parser)]
#[command(name = "xmhash", version, about = "Multi-length cross-modal hashing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train all code lengths from a config file and write a model bundle.
    Train(TrainArgs),
    /// Encode raw features of one modality into packed codes.
    Encode(EncodeArgs),
    /// Rank a database of codes for every query code.
    Retrieve(RetrieveArgs),
    /// Compute mAP and precision-recall curves for both retrieval directions.
    Eval(EvalArgs),
    /// Write a synthetic two-modality dataset.
    Synth(SynthArgs),
    /// Check rotation orthogonality and the distance bounds of a bundle.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    x1: Option<PathBuf>,
    #[arg(long)]
    x2: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Objective trace (JSON). Defaults to `<model>.trace.json`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Leave out S, B, U_b, P and T (the bundle can still encode, but not be
    /// diagnosed).
    #[arg(long)]
    lean: bool,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    modality: u8,
    #[arg(long)]
    bits: usize,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Keep only the first N items per query (all when omitted).
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Learned,
    Reencoded,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    query_x1: PathBuf,
    #[arg(long)]
    query_x2: PathBuf,
    #[arg(long)]
    query_labels: PathBuf,
    /// Database labels: the training labels for learned codes.
    #[arg(long)]
    db_labels: PathBuf,
    #[arg(long)]
    db_x1: Option<PathBuf>,
    #[arg(long)]
    db_x2: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "learned")]
    db_source: SourceArg,
    /// JSON report. Curves go next to it as `<stem>.<task>.<bits>.pr.tsv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    latent_dim: usize,
    #[arg(long, default_value_t = 64)]
    d1: usize,
    #[arg(long, default_value_t = 48)]
    d2: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
    #[arg(long, default_value_t = 0.1)]
    query_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    model: PathBuf,
    /// Raw training features of modality 1.
    #[arg(long)]
    x1: PathBuf,
    /// Raw training features of modality 2.
    #[arg(long)]
    x2: PathBuf,
    #[arg(long, default_value_t = 100)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn features(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::new(read_matrix(path)?)
}

fn labels(path: &Path) -> Result<LabelMatrix> {
    LabelMatrix::new(read_matrix(path)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn required(flag: Option<PathBuf>, config: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(config)
        .ok_or_else(|| Error::Config(format!("no {name} input: set it in the config or pass --{name}")))
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = parse_config(&args.config)?;
    let hp = cfg.hyperparams;
    let x1 = features(&required(args.x1, cfg.inputs.x1, "x1")?)?;
    let x2 = features(&required(args.x2, cfg.inputs.x2, "x2")?)?;
    let y = labels(&required(args.labels, cfg.inputs.labels, "labels")?)?;
    log::info!("training lengths {:?} on {} samples", hp.lengths, x1.samples());
    let model = train_from_raw(&x1, &x2, &y, &hp)?;
    save_model_with(&args.model, &model.state, &model.kernel, &hp, !args.lean)?;
    let trace = args.trace.unwrap_or_else(|| {
        let mut name = args.model.clone().into_os_string();
        name.push(".trace.json");
        PathBuf::from(name)
    });
    write_json(&trace, &model.trace)?;
    log::info!(
        "{} iterations ({:?}), final objective {:.6e}",
        model.trace.iterations.len(),
        model.trace.stop,
        model.trace.final_objective()
    );
    Ok(())
}

fn encode(args: EncodeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let t = Modality::from_number(args.modality as usize)?;
    let codes = model.encoder.encode_packed(t, &features(&args.input)?, args.bits)?;
    write_codes(&args.out, &codes)
}

fn retrieve(args: RetrieveArgs) -> Result<()> {
    let db = read_codes(&args.db)?;
    let queries = read_codes(&args.queries)?;
    if db.bits() != queries.bits() {
        return Err(Error::LengthMismatch {
            left: queries.bits(),
            right: db.bits(),
        });
    }
    let keep = args.topk.unwrap_or(db.len()).min(db.len());
    let mut out = String::from("query\trank\tindex\tdistance\n");
    for (q, code) in queries.iter().enumerate() {
        let ranking = rank(q, code, &db)?;
        for (pos, (&i, &d)) in ranking.order.iter().zip(&ranking.distances).take(keep).enumerate() {
            out.push_str(&format!("{q}\t{}\t{i}\t{d}\n", pos + 1));
        }
    }
    write_atomic(&args.out, out.as_bytes())
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Img2Txt => "img2txt",
        Task::Txt2Img => "txt2img",
    }
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let qx1 = features(&args.query_x1)?;
    let qx2 = features(&args.query_x2)?;
    let yq = labels(&args.query_labels)?;
    let ydb = labels(&args.db_labels)?;
    let db_features;
    let database = match args.db_source {
        SourceArg::Learned => Database::Learned(&model.learned_codes),
        SourceArg::Reencoded => {
            let (Some(p1), Some(p2)) = (&args.db_x1, &args.db_x2) else {
                return Err(Error::Config("--db-source reencoded needs --db-x1 and --db-x2".into()));
            };
            db_features = [features(p1)?, features(p2)?];
            Database::Features([&db_features[0], &db_features[1]])
        }
    };
    let report = evaluate(&model.encoder, [&qx1, &qx2], &yq, database, &ydb)?;
    write_json(&args.out, &report)?;
    let stem = args.out.with_extension("");
    for task in Task::BOTH {
        for &bits in &model.manifest.lengths {
            if let Some(table) = report.pr_table(task, bits) {
                let mut name = stem.clone().into_os_string();
                name.push(format!(".{}.{bits}.pr.tsv", task_name(task)));
                write_atomic(Path::new(&name), table.as_bytes())?;
            }
        }
        if let Some(t) = report.task(task) {
            for r in &t.results {
                println!("{}\t{}\t{:.4}", task_name(task), r.bits, r.map);
            }
        }
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let data = generate(&SynthSpec {
        n: args.n,
        classes: args.classes,
        latent_dim: args.latent_dim,
        d1: args.d1,
        d2: args.d2,
        noise: args.noise,
        jitter: args.jitter,
        query_fraction: args.query_fraction,
        seed: args.seed,
    })?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for (split, part) in [("train", data.train_part()), ("query", data.query_part())] {
        write_matrix(args.out.join(format!("{split}_x1.mhx")), part.x1.as_matrix())?;
        write_matrix(args.out.join(format!("{split}_x2.mhx")), part.x2.as_matrix())?;
        write_matrix(args.out.join(format!("{split}_labels.mhx")), part.labels.as_matrix())?;
    }
    Ok(())
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let state = model.state.as_ref().ok_or_else(|| Error::MissingFile {
        path: args.model.clone(),
        what: "diagnostic variables (bundle was saved lean)".into(),
    })?;
    let kernel = model.encoder.kernel.clone();
    let phi = [
        kernel.transform(Modality::First, &features(&args.x1)?)?,
        kernel.transform(Modality::Second, &features(&args.x2)?)?,
    ];
    let mut lengths = Vec::new();
    let mut ok = true;
    for (k, ls) in state.lengths.iter().enumerate() {
        let defect = orthogonality_defect(&ls.r);
        ok &= defect <= xmhash_core::model::ORTHOGONALITY_TOLERANCE;
        let mut modalities = Vec::new();
        for t in Modality::BOTH {
            let report = bilipschitz_diagnostic(state, &phi[t.slot()], k, t, args.pairs, args.seed)?;
            ok &= report.holds();
            modalities.push(serde_json::json!({
                "modality": t.number(),
                "d1": report.d1,
                "d2": report.d2,
                "min_lower_slack": report.min_lower_slack(),
                "min_upper_slack": report.min_upper_slack(),
                "holds": report.holds(),
            }));
        }
        lengths.push(serde_json::json!({
            "bits": ls.bits(),
            "orthogonality_defect": defect,
            "bounds": modalities,
        }));
    }
    let summary = serde_json::json!({ "ok": ok, "lengths": lengths });
    match &args.out {
        Some(path) => write_json(path, &summary)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, &summary)?;
            writeln!(stdout).map_err(|e| Error::io(Path::new("<stdout>"), e))?;
        }
    }
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParam("diagnostic bounds violated".into()))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Diagnose(a) => diagnose(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.code());
            ExitCode::FAILURE
        }
    }
}
