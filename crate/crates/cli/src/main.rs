use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hrcam_core::cam::CamMethod;
use hrcam_core::io::read_model;
use hrcam_core::par::threads_from_env;
use hrcam_core::pipeline::{
    self, cam_input_from_file, cam_inputs_from_dataset, compare_csv, export_cams, CamRequest, Phase, RunConfig,
    MODEL_FILE,
};
use hrcam_core::simdata::Split;
use hrcam_core::{Error, Result};

/// High-resolution class activation maps: simulate, train, map and evaluate.
#[derive(Parser)]
#[command(name = "hrcam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default run configuration as JSON.
    InitConfig {
        /// Destination file; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Generate the simulated dataset.
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset directory [default: <output_dir>/data].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also store exact f32 images next to the PGMs.
        #[arg(long)]
        raw: bool,
    },
    /// Train the backbone (phase 1) and the multi-layer head (phase 2).
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset directory [default: <output_dir>/data].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model directory [default: <output_dir>/model].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export normalized class activation maps as PGM images.
    Cam(CamArgs),
    /// Evaluate localization and classification on the test split.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        /// Model file [default: <output_dir>/model/model.hrm].
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset directory [default: <output_dir>/data].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory [default: <output_dir>/eval].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated methods, overriding the config.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Check the method ordering in a metrics CSV; exit 1 if it is violated.
    Compare {
        metrics: PathBuf,
    },
    /// Generate, train and evaluate in one go under the configured output directory.
    Run {
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration JSON; built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct CamArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// A single input image (PGM, or HRT1 tensor).
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    image: Option<PathBuf>,
    /// Dataset directory to draw inputs from.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Sample ids to export (comma-separated); all of the split when omitted.
    #[arg(long, value_delimiter = ',')]
    ids: Vec<usize>,
    /// At most this many samples.
    #[arg(long)]
    limit: Option<usize>,
    /// hrcam, gradcam, zhou, or all; may be repeated or comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "hrcam")]
    method: Vec<String>,
    /// Class to map; the predicted class when omitted.
    #[arg(long = "class")]
    class_id: Option<usize>,
    /// Grad-CAM tap index; the penultimate tap when omitted.
    #[arg(long)]
    layer: Option<usize>,
    /// Also write the raw map as an HRT1 tensor.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_methods(names: &[String]) -> Result<Vec<CamMethod>> {
    let mut out = Vec::new();
    for n in names {
        if n.eq_ignore_ascii_case("all") {
            out.extend(CamMethod::ALL);
        } else {
            out.push(n.parse()?);
        }
    }
    let mut seen = Vec::new();
    out.retain(|m| {
        let fresh = !seen.contains(m);
        seen.push(*m);
        fresh
    });
    Ok(out)
}

fn report_epoch(phase: Phase, epoch: usize, loss: f64, acc: f64) {
    eprintln!("{phase} epoch {:>3}: loss {loss:.5}, train accuracy {acc:.4}", epoch + 1);
}

fn or_default(p: &Option<PathBuf>, d: PathBuf) -> PathBuf {
    p.clone().unwrap_or(d)
}

fn cmd_cam(a: &CamArgs) -> Result<()> {
    let model = read_model::<f32>(&a.model)?;
    let inputs = match (&a.image, &a.data) {
        (Some(p), _) => vec![cam_input_from_file(p)?],
        (None, Some(d)) => {
            let split = match a.split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            cam_inputs_from_dataset(d, split, &a.ids, a.limit)?
        }
        (None, None) => return Err(Error::Usage("either --image or --data is required".into())),
    };
    let req = CamRequest { methods: parse_methods(&a.method)?, class_id: a.class_id, layer: a.layer, raw: a.raw };
    let outputs = export_cams(&model, &inputs, &req, &a.out)?;
    for o in &outputs {
        println!("{} {} class {} -> {}", o.input, o.method, o.class_id, o.map.display());
    }
    Ok(())
}

fn print_eval(report: &pipeline::EvalReport) {
    let s = &report.summary;
    println!("backbone accuracy {:.4}, multi-layer head accuracy {:.4}", s.backbone_accuracy, s.gap_head_accuracy);
    for m in &s.methods {
        println!(
            "{:<8} sensitivity {:.4} specificity {:.4} precision {:.4} fallout {:.4} ({} samples, {} skipped)",
            m.method.name(),
            m.means.sensitivity,
            m.means.specificity,
            m.means.precision,
            m.means.fallout,
            m.evaluated,
            m.skipped.len()
        );
    }
}

/// Returns the process exit status for commands that judge their result.
fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::InitConfig { out } => {
            let json = serde_json::to_string_pretty(&RunConfig::default())?;
            match out {
                Some(p) => std::fs::write(&p, json + "\n").map_err(|e| Error::Io { path: p, source: e })?,
                None => println!("{json}"),
            }
        }
        Command::GenData { config, out, raw } => {
            let mut cfg = config.load()?;
            cfg.raw_images |= raw;
            let dir = or_default(&out, cfg.data_dir());
            let m = pipeline::gen_data(&cfg, &dir)?;
            println!("wrote {} samples to {}", m.samples.len(), dir.display());
        }
        Command::Train { config, data, out } => {
            let cfg = config.load()?;
            let out = or_default(&out, cfg.model_dir());
            let r = pipeline::train(&cfg, &or_default(&data, cfg.data_dir()), &out, &mut report_epoch)?;
            println!("wrote {} (sha256 {})", out.join(MODEL_FILE).display(), r.model_checksum);
            println!("backbone unchanged by phase 2: {}", r.backbone_frozen);
        }
        Command::Cam(a) => cmd_cam(&a)?,
        Command::Eval { config, model, data, out, methods } => {
            let mut cfg = config.load()?;
            if let Some(names) = methods {
                cfg.cam.methods = parse_methods(&names)?;
                cfg.validate()?;
            }
            let model = or_default(&model, cfg.model_dir().join(MODEL_FILE));
            let out = or_default(&out, cfg.eval_dir());
            let report = pipeline::evaluate(&cfg, &model, &or_default(&data, cfg.data_dir()), &out, threads_from_env())?;
            print_eval(&report);
            println!("wrote {}", out.display());
        }
        Command::Compare { metrics } => {
            let report = compare_csv(&metrics)?;
            println!("{report}");
            return Ok(if report.holds() { 0 } else { 1 });
        }
        Command::Run { config } => {
            let cfg = config.load()?;
            let r = pipeline::run_all(&cfg, threads_from_env(), &mut report_epoch)?;
            print_eval(&r.eval);
            if let Some(c) = &r.compare {
                println!("{c}");
            }
            println!("outputs in {}", Path::new(&cfg.output_dir).display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
