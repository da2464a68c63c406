use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use txid_core::dataprep::{
    read_features, split, time_features, validation_split, write_features, FeatureSet, NormStats, SplitSpec, TimeMode, DEFAULT_TAU,
};
use txid_core::frontend::{packet_scalogram, FrontEnd, FrontEndConfig};
use txid_core::harness::complexity::run_complexity_report;
use txid_core::harness::curvefit::{run_curvefit, CurveFn, BUDGETS};
use txid_core::harness::incremental::{run_incremental, IncrementalSpec};
use txid_core::harness::sweep::{mst_config, mst_optimizer, run_classification_sweep, run_order_comparison, SweepSpec};
use txid_core::harness::variance::{run_variance_report, sparsity_of_dir};
use txid_core::harness::wavelet_cmp::run_wavelet_comparison;
use txid_core::harness::Report;
use txid_core::mst::{evaluate, read_model, train_incremental, train_mst, write_model, StageConfig};
use txid_core::seed::{derive_seed, label_seed};
use txid_core::signal::io::{read_corpus, write_corpus};
use txid_core::signal::{generate_corpus, Corpus, CorpusSpec, TransmitterProfile};
use txid_core::wavelet::{
    read_scalogram, read_scalogram_header, write_scalogram, write_scalogram_header, Channel, CwtPlan, MorletParams, ScalogramEntry,
    ScalogramHeader,
};
use txid_core::{Error, Result};

#[derive(Parser)]
#[command(name = "txid", version, about = "Transmitter identification experiments")]
struct Cli {
    /// Experiment seed.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Output directory (or file, where noted).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON settings for the subcommand, or `default`.
    #[arg(long, global = true)]
    config: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Corpus directory written by `gen`; the default corpus is generated
    /// in memory when omitted.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Use 1000 packets per transmitter instead of 200.
    #[arg(long)]
    full: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus.
    Gen {
        /// JSON array of transmitter profiles.
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        packets: usize,
        #[arg(long, default_value_t = 30.0)]
        snr: f64,
    },
    /// Onset detection, segmentation, split and normalization.
    Prep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 256)]
        wn: usize,
        /// `concat` or `magnitude`.
        #[arg(long, default_value = "concat")]
        mode: String,
        #[arg(long, default_value = "90/10")]
        split: String,
    },
    /// Scalograms of each packet's onset-aligned segment.
    Cwt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "magnitude")]
        channel: String,
        #[arg(long, default_value_t = 128)]
        scales: usize,
        #[arg(long, default_value_t = 2048)]
        length: usize,
        /// Only the first N packets of each transmitter.
        #[arg(long)]
        per_tx: Option<usize>,
    },
    /// Fit the SOM front end on a scalogram directory.
    FrontendTrain {
        #[arg(long = "in")]
        input: PathBuf,
        /// Number of SOM filters.
        #[arg(long, default_value_t = 16)]
        k: usize,
    },
    /// Front-end features for a scalogram directory.
    FrontendApply {
        /// Directory holding `som.json`, or the file itself.
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Also write normalized train/test partitions.
        #[arg(long)]
        split: Option<String>,
    },
    /// Train an MST on `<features>/train`.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: u8,
    },
    /// Evaluate a model bundle on `<features>/test`.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Incremental training of one model, or the grid report without `--features`.
    Incremental {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        k: u32,
        #[arg(long, default_value_t = 12)]
        n: u32,
        /// Grid pipeline: `time` or `wavelet`.
        #[arg(long, default_value = "time")]
        grid: String,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Curve-fitting comparison of second- and first-order training.
    Curvefit {
        /// `a`, `b`, `c` or `all`.
        #[arg(long, default_value = "all")]
        function: String,
        #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Classification experiments.
    Sweep {
        /// `classification`, `order` or `wavelet`.
        #[arg(long, default_value = "classification")]
        kind: String,
        /// Runs of the wavelet comparison.
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Training fraction for `order` and `wavelet`.
        #[arg(long)]
        split: Option<String>,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Parameter counts and Hessian cost ratios.
    Complexity,
    /// Variance maps: four channels from a corpus, or one from a `cwt` directory.
    Varmap {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        ns: usize,
        #[arg(long)]
        full: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", json!({"kind": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}

fn config_json(cli: &Cli) -> Result<Option<Value>> {
    match cli.config.as_deref() {
        None | Some("default") => Ok(None),
        Some(path) => Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?)),
    }
}

fn config_as<T: serde::de::DeserializeOwned>(cli: &Cli) -> Result<Option<T>> {
    config_json(cli)?.map(serde_json::from_value).transpose().map_err(Error::from)
}

fn load_corpus(args: &CorpusArgs, cli: &Cli) -> Result<Corpus> {
    match &args.input {
        Some(dir) => read_corpus(dir),
        None => {
            let mut spec = CorpusSpec::desk_default();
            if args.full {
                spec.packets_per_tx = 1000;
            }
            if let Some(s) = config_json(cli)?.and_then(|v| v.get("corpus").cloned()) {
                spec = serde_json::from_value(s)?;
            }
            generate_corpus(&spec)
        }
    }
}

fn finish(report: &Report, out: &Path) -> Result<Value> {
    report.write(out)?;
    Ok(json!({"report": report.name, "rows": report.rows.len(), "digest": report.digest(), "out": out}))
}

fn parse_split(s: &str, seed: u64) -> Result<SplitSpec> {
    SplitSpec::parse(s, seed)
}

fn write_partition(out: &Path, all: &FeatureSet, spec: &SplitSpec, description: &str) -> Result<Value> {
    let (train_idx, test_idx) = split(&all.labels, spec)?;
    let mut train = all.subset(&train_idx);
    let mut test = all.subset(&test_idx);
    let norm = NormStats::fit(&train)?;
    norm.apply(&mut train);
    norm.apply(&mut test);
    let desc = format!("{description}, split {}", spec.tag());
    write_features(out, "train", &train, Some(norm.clone()), &desc)?;
    write_features(out, "test", &test, Some(norm), &desc)?;
    Ok(json!({"train": train.len(), "test": test.len(), "dim": all.dim, "out": out}))
}

/// Training file split into fit and validation parts.
fn fit_and_val(set: &FeatureSet, seed: u64) -> (FeatureSet, FeatureSet) {
    let idx: Vec<usize> = (0..set.len()).collect();
    let (fit, val) = validation_split(&set.labels, &idx, derive_seed(seed, &[label_seed("validation")]));
    (set.subset(&fit), set.subset(&val))
}

fn read_stem(dir: &Path, preferred: &str) -> Result<(FeatureSet, txid_core::dataprep::FeatureHeader)> {
    if dir.join(format!("{preferred}.json")).exists() {
        read_features(dir, preferred)
    } else {
        read_features(dir, "features")
    }
}

fn stage_configs(cli: &Cli, order: u8, n_t: u32) -> Result<Vec<StageConfig>> {
    match config_as::<Vec<StageConfig>>(cli)? {
        Some(c) => Ok(c),
        None => mst_config(order, n_t),
    }
}

fn run(cli: &Cli) -> Result<Value> {
    let seed = cli.seed;
    let out = cli.out.as_path();
    match &cli.cmd {
        Cmd::Gen { profiles, packets, snr } => {
            let mut spec = config_as::<CorpusSpec>(cli)?.unwrap_or_else(CorpusSpec::desk_default);
            if cli.config.is_none() || cli.config.as_deref() == Some("default") {
                spec.packets_per_tx = *packets;
                spec.snr_db = *snr;
                spec.seed = seed;
            }
            if let Some(p) = profiles {
                spec.profiles = serde_json::from_str::<Vec<TransmitterProfile>>(&fs::read_to_string(p)?)?;
            }
            let corpus = generate_corpus(&spec)?;
            write_corpus(out, &corpus)?;
            Ok(json!({"packets": corpus.packets.len(), "transmitters": corpus.n_transmitters(), "out": out}))
        }
        Cmd::Prep { input, wn, mode, split } => {
            let corpus = read_corpus(input)?;
            let mode = match mode.as_str() {
                "concat" => TimeMode::ConcatReIm,
                "magnitude" => TimeMode::Magnitude,
                m => return Err(Error::InvalidParameter(format!("unknown mode `{m}` (concat or magnitude)"))),
            };
            let all = time_features(&corpus.packets, DEFAULT_TAU, *wn, mode)?;
            write_partition(out, &all, &parse_split(split, seed)?, &format!("w{wn} {mode:?}"))
        }
        Cmd::Cwt { input, channel, scales, length, per_tx } => {
            let corpus = read_corpus(input)?;
            let channel = Channel::parse(channel)?;
            let params = MorletParams { n_scales: *scales, ..MorletParams::for_length(*length) };
            let plan = CwtPlan::new(*length, &params)?;
            fs::create_dir_all(out)?;
            let mut entries = Vec::new();
            for p in &corpus.packets {
                if per_tx.is_some_and(|k| p.packet_id as usize > k) {
                    continue;
                }
                write_scalogram(out, &p.name, &packet_scalogram(p, DEFAULT_TAU, channel, &plan)?)?;
                entries.push(ScalogramEntry { name: p.name.clone(), tx_label: p.tx_label, packet_id: p.packet_id });
            }
            let header = ScalogramHeader { rows: *scales, cols: *length, channel, scales: plan.scales().to_vec(), entries };
            write_scalogram_header(out, &header)?;
            Ok(json!({"scalograms": header.entries.len(), "shape": [header.rows, header.cols], "out": out}))
        }
        Cmd::FrontendTrain { input, k } => {
            let header = read_scalogram_header(input)?;
            let cfg = frontend_config(header.rows, header.cols, *k)?;
            let mut failure = None;
            let stream = header.entries.iter().map_while(|e| match read_scalogram(input, &header, e) {
                Ok(s) => Some(s),
                Err(err) => {
                    failure = Some(err);
                    None
                }
            });
            let fe = FrontEnd::fit(stream, &cfg, seed);
            if let Some(e) = failure {
                return Err(e);
            }
            let fe = fe?;
            fs::create_dir_all(out)?;
            fs::write(out.join("som.json"), serde_json::to_string_pretty(&fe)?)?;
            Ok(json!({"filters": cfg.n_filters(), "output_dim": cfg.output_dim, "out": out.join("som.json")}))
        }
        Cmd::FrontendApply { model, input, split } => {
            let path = if model.is_dir() { model.join("som.json") } else { model.clone() };
            let fe: FrontEnd = serde_json::from_str(&fs::read_to_string(path)?)?;
            let header = read_scalogram_header(input)?;
            let mut set = FeatureSet::new(fe.cfg.output_dim);
            for e in &header.entries {
                set.push(&fe.extract(&read_scalogram(input, &header, e)?)?, e.tx_label, e.name.clone())?;
            }
            match split {
                Some(s) => write_partition(out, &set, &parse_split(s, seed)?, "wavelet front end"),
                None => {
                    write_features(out, "features", &set, None, "wavelet front end")?;
                    Ok(json!({"features": set.len(), "dim": set.dim, "out": out}))
                }
            }
        }
        Cmd::Train { features, order } => {
            let (train, header) = read_stem(features, "train")?;
            let n_t = train.n_classes();
            let cfg = stage_configs(cli, *order, n_t)?;
            let (fit, val) = fit_and_val(&train, seed);
            let opt = mst_optimizer(*order, seed)?;
            let (model, report) = train_mst(&fit, Some(&val), &cfg, &opt, seed)?;
            let acc = evaluate(&model, &train)?.accuracy;
            let metrics = json!({"train_accuracy": acc, "iterations": report.iterations(), "optimizer": opt});
            write_model(out, &model, header.norm, None, metrics.clone())?;
            Ok(json!({"model": out, "config_hash": model.config_hash(), "metrics": metrics}))
        }
        Cmd::Eval { model, features, confusion } => {
            let loaded = read_model(model)?;
            let (test, _) = read_stem(features, "test")?;
            let e = evaluate(&loaded.model, &test)?;
            if let Some(path) = confusion {
                fs::write(path, e.confusion.to_csv())?;
                fs::write(path.with_extension("pgm"), e.confusion.to_pgm(8))?;
            }
            Ok(json!({"accuracy": e.accuracy, "samples": test.len()}))
        }
        Cmd::Incremental { features, k, n, grid, corpus } => match features {
            Some(dir) => {
                let (train, header) = read_stem(dir, "train")?;
                let cfg = stage_configs(cli, 2, *n)?;
                let (fit, val) = fit_and_val(&train, seed);
                let (model, report) = train_incremental(&fit, Some(&val), &cfg, *k, *n, &mst_optimizer(2, seed)?, seed)?;
                let metrics = json!({"k": k, "n": n, "iterations": report.iterations()});
                write_model(out, &model, header.norm, None, metrics.clone())?;
                Ok(json!({"model": out, "metrics": metrics}))
            }
            None => {
                let c = load_corpus(corpus, cli)?;
                let spec = match config_as::<IncrementalSpec>(cli)? {
                    Some(s) => s,
                    None => match grid.as_str() {
                        "time" => IncrementalSpec::time_domain(seed),
                        "wavelet" => IncrementalSpec::wavelet(seed),
                        g => return Err(Error::InvalidParameter(format!("unknown grid `{g}` (time or wavelet)"))),
                    },
                };
                finish(&run_incremental(&c, &spec)?, out)
            }
        },
        Cmd::Curvefit { function, seeds } => {
            let fns = match function.as_str() {
                "all" => vec![CurveFn::A, CurveFn::B, CurveFn::C],
                f => vec![CurveFn::parse(f)?],
            };
            finish(&run_curvefit(&fns, &BUDGETS, seeds)?, out)
        }
        Cmd::Sweep { kind, runs, split, corpus } => {
            let c = load_corpus(corpus, cli)?;
            let frac = |default: f64| -> Result<f64> {
                Ok(match split {
                    Some(s) => parse_split(s, seed)?.train_fraction,
                    None => default,
                })
            };
            let report = match kind.as_str() {
                "classification" => {
                    let spec = config_as::<SweepSpec>(cli)?.unwrap_or_else(|| SweepSpec::desk_default(seed));
                    run_classification_sweep(&c, &spec)?
                }
                "order" => run_order_comparison(&c, 32, frac(0.1)?, seed)?,
                "wavelet" => run_wavelet_comparison(&c, frac(0.9)?, *runs, seed)?,
                k => return Err(Error::InvalidParameter(format!("unknown sweep kind `{k}`"))),
            };
            finish(&report, out)
        }
        Cmd::Complexity => {
            let report = run_complexity_report()?;
            print!("{}", report.to_csv());
            for n in &report.notes {
                println!("# {n}");
            }
            finish(&report, out)
        }
        Cmd::Varmap { input, ns, full } => match input {
            Some(dir) if dir.join(txid_core::wavelet::SCALOGRAM_HEADER).exists() => finish(&sparsity_of_dir(dir, *ns)?, out),
            _ => {
                let args = CorpusArgs { input: input.clone(), full: *full };
                finish(&run_variance_report(&load_corpus(&args, cli)?, *ns)?, out)
            }
        },
    }
}

/// Front-end settings for `k` filters on a `rows x cols` scalogram, the SOM
/// grid as square as `k` allows.
fn frontend_config(rows: usize, cols: usize, k: usize) -> Result<FrontEndConfig> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let mut cfg = FrontEndConfig::for_input(rows, cols)?;
    let r = (1..=k).filter(|r| k % r == 0 && r * r <= k).max().unwrap_or(1);
    cfg.som_rows = r;
    cfg.som_cols = k / r;
    let (pr, pc) = cfg.pooled_shape(rows, cols)?;
    cfg.output_dim = pr * pc * k;
    cfg.validate(rows, cols)?;
    Ok(cfg)
}
