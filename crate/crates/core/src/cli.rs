//! Command-line surface: `gen`, `train`, `report` and the `verify-*` suites.
//!
//! Every run writes `manifest-<command>.json` into the output directory. Its
//! `hash` covers the library version, the command and its resolved inputs
//! (never the thread count or output path), and every JSON output echoes it.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::hierarchy::{sample_dataset, Dataset, Target};
use crate::metrics::MetricsReport;
use crate::resnet::{init_network, Checkpoint};
use crate::train::{train_all_with, TrainTrace};
use crate::verify;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "hiernet", version, about = "Layerwise residual-network training on hierarchical targets")]
struct Cli {
    /// Worker thread cap (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "HIERNET_OUT", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the target and a dataset.
    Gen(ConfigArgs),
    /// Train all layers on `<out>/dataset.json`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to `<out>/dataset.json`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Render `<out>/trace.json` as plain-text tables.
    Report,
    VerifyKernel {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 100_000)]
        mc_samples: usize,
    },
    VerifyRf {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 512)]
        points: usize,
        #[arg(long, value_delimiter = ',', default_value = "512,4096")]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
    VerifyBraindump {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 20_000)]
        q_labels: usize,
        #[arg(long, default_value_t = 100)]
        runs: usize,
    },
    VerifyLoss {
        #[arg(long, default_value_t = 100_000)]
        points: usize,
    },
}

/// Hash of the run identity plus the sha256 of every file it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub library_version: String,
    pub command: String,
    pub hash: String,
    pub inputs: Value,
    pub outputs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Run {
    dir: PathBuf,
    command: String,
    inputs: Value,
    hash: String,
    outputs: BTreeMap<String, String>,
}

impl Run {
    fn new(dir: &Path, command: &str, inputs: Value) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let identity = json!({
            "library_version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "inputs": inputs,
        });
        Ok(Run {
            dir: dir.to_path_buf(),
            command: command.into(),
            hash: sha256_hex(serde_json::to_string(&identity)?.as_bytes()),
            inputs,
            outputs: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes `value` as pretty JSON with a top-level `manifest_hash`.
    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let Value::Object(m) = &mut v {
            m.insert("manifest_hash".into(), Value::String(self.hash.clone()));
        }
        let s = serde_json::to_string_pretty(&v)?;
        self.write(name, s.as_bytes())
    }

    fn finish(self) -> Result<Manifest> {
        let m = Manifest {
            version: MANIFEST_VERSION,
            library_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            hash: self.hash,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = self.dir.join(format!("manifest-{}.json", m.command));
        std::fs::write(&path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&path, e))?;
        Ok(m)
    }
}

/// The stored target plus its manifest hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetFile {
    pub manifest_hash: Option<String>,
    pub target: Target,
}

impl TargetFile {
    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Corrupt {
            path: path.into(),
            reason: e.to_string(),
        })
    }
}

fn load_config(a: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    cfg.manifest_hash = None;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.resolve()
}

fn config_inputs(cfg: &ExperimentConfig) -> Result<Value> {
    let mut c = cfg.clone();
    c.output.dir = None;
    Ok(json!({ "config": c, "seed": cfg.seed }))
}

fn cmd_gen(out: &Path, a: &ConfigArgs) -> Result<Manifest> {
    let cfg = load_config(a)?;
    let mut run = Run::new(out, "gen", config_inputs(&cfg)?)?;
    let target = cfg.build_target()?;
    let mut ds = sample_dataset(&target, cfg.generator.m, cfg.seed)?;
    ds.manifest_hash = Some(run.hash.clone());
    run.write_json("config.resolved.json", &cfg)?;
    run.write_json(
        "target.json",
        &TargetFile {
            manifest_hash: None,
            target,
        },
    )?;
    run.write("dataset.json", serde_json::to_string(&ds)?.as_bytes())?;
    run.finish()
}

fn cmd_train(out: &Path, a: &ConfigArgs, dataset: Option<&Path>) -> Result<Manifest> {
    let cfg = load_config(a)?;
    let ds_path = dataset.map(Path::to_path_buf).unwrap_or_else(|| out.join("dataset.json"));
    let ds = Dataset::load(&ds_path)?;
    let g = &cfg.generator;
    if ds.meta.d != g.d || ds.meta.seed != cfg.seed || ds.m() != g.m || ds.meta.generator != cfg.generator_name() {
        return Err(Error::Config(format!(
            "dataset {} was not generated from this config (d, m, seed or generator differ)",
            ds_path.display()
        )));
    }
    let mut inputs = config_inputs(&cfg)?;
    inputs["dataset_manifest_hash"] = json!(ds.manifest_hash);
    let mut run = Run::new(out, "train", inputs)?;
    let prox = cfg.proximity()?;
    let mut params = init_network(
        ds.meta.d,
        ds.meta.n,
        cfg.network.q_width,
        cfg.network.depth,
        &prox,
        cfg.beta()?,
        cfg.network.orthogonal_mode,
        cfg.activation_spec()?,
        cfg.seed,
    )?;
    let lp = cfg.loss_params(ds.meta.g)?;
    let tc = cfg.train_config();
    tc.validate()?;
    let mut trace = train_all_with(&mut params, &ds, &lp, &tc, |k, recs| {
        let learned = recs.iter().filter(|r| r.worst_margin > 0.0).count();
        eprintln!("layer {k}: {learned}/{} labels with positive margin", recs.len());
    })?;
    trace.manifest_hash = Some(run.hash.clone());
    let mut ck = Checkpoint::new(params);
    ck.manifest_hash = Some(run.hash.clone());
    ck.config = Some(serde_json::to_value(&cfg)?);
    run.write("checkpoint.json", serde_json::to_string(&ck)?.as_bytes())?;
    run.write("trace.csv", trace.to_csv()?.as_bytes())?;
    run.write("trace.json", serde_json::to_string_pretty(&trace)?.as_bytes())?;
    run.finish()
}

fn cmd_report(out: &Path) -> Result<Manifest> {
    let trace = TrainTrace::load_json(&out.join("trace.json"))?;
    let target = TargetFile::load(&out.join("target.json"))?.target;
    let cum = target.cum();
    let levels: Vec<_> = cum
        .iter()
        .enumerate()
        .map(|(i, &e)| if i == 0 { 0..e } else { cum[i - 1]..e })
        .collect();
    let inputs = json!({
        "trace_manifest_hash": trace.manifest_hash,
        "levels": cum,
    });
    let mut run = Run::new(out, "report", inputs)?;
    let report = MetricsReport::new(&trace, &levels);
    let text = format!("manifest {}\n\n{}", run.hash, report.render());
    run.write("report.txt", text.as_bytes())?;
    run.write_json("metrics.json", &report)?;
    print!("{}", report.render());
    run.finish()
}

/// Writes `<name>.json` and fails the command when the suite fails.
fn finish_suite<T: Serialize>(mut run: Run, name: &str, report: &T, pass: bool) -> Result<Manifest> {
    run.write_json(&format!("{name}.json"), report)?;
    println!("{name}: {}", if pass { "PASS" } else { "FAIL" });
    let m = run.finish()?;
    if pass {
        Ok(m)
    } else {
        Err(Error::Numerical(format!("{name} suite failed; see {name}.json")))
    }
}

fn dispatch(cli: &Cli) -> Result<Manifest> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Gen(a) => cmd_gen(out, a),
        Command::Train { cfg, dataset } => cmd_train(out, cfg, dataset.as_deref()),
        Command::Report => cmd_report(out),
        &Command::VerifyKernel {
            seed,
            queries,
            mc_samples,
        } => {
            let run = Run::new(out, "verify-kernel", json!({"seed": seed, "queries": queries, "mc_samples": mc_samples}))?;
            let r = verify::kernel_suite(queries, mc_samples, seed)?;
            finish_suite(run, "verify-kernel", &r, r.pass)
        }
        Command::VerifyRf {
            seed,
            n,
            points,
            widths,
            seeds,
            eps,
        } => {
            let inputs = json!({"seed": seed, "n": n, "points": points, "widths": widths, "seeds": seeds, "eps": eps});
            let run = Run::new(out, "verify-rf", inputs)?;
            let r = verify::rf_sweep(*n, *points, widths, *seeds, *eps, *seed)?;
            finish_suite(run, "verify-rf", &r, r.pass)
        }
        &Command::VerifyBraindump {
            seed,
            d,
            k,
            q_labels,
            runs,
        } => {
            let inputs = json!({"seed": seed, "d": d, "k": k, "q_labels": q_labels, "runs": runs});
            let run = Run::new(out, "verify-braindump", inputs)?;
            let r = verify::braindump_suite(d, k, q_labels, runs, seed)?;
            finish_suite(run, "verify-braindump", &r, r.pass)
        }
        &Command::VerifyLoss { points } => {
            let run = Run::new(out, "verify-loss", json!({"points": points}))?;
            let r = verify::loss_suite(points)?;
            finish_suite(run, "verify-loss", &r, r.pass)
        }
    }
}

/// Machine-readable error record printed to stderr on failure.
pub fn error_record(kind: &str, message: &str) -> String {
    json!({"error": {"kind": kind, "message": message}}).to_string()
}

/// Runs the CLI on `argv` (including the program name); returns the exit status.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_record("usage", e.to_string().trim()));
            return 2;
        }
    };
    let result = match cli.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", error_record(e.kind(), &e.to_string()));
            1
        }
    }
}
