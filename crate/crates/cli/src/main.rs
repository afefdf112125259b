//! `wifipose`: synthesize datasets, train, evaluate, infer and render.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod config;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use wifipose::eval::PckJson;
use wifipose::nnet::{load_checkpoint, save_checkpoint};
use wifipose::pose::{read_landmark_lines, write_landmark_lines, LandmarkRecord};
use wifipose::svg::render_skeleton_svg;
use wifipose::synth::synthesize;
use wifipose::train::{predict, train_with};
use wifipose::{load_dataset, pck, report_table, save_dataset, Dataset, Error, PoseLandmarks, JOINT_NAMES};

use config::{ConfigError, RunConfig, SEED_ENV};

#[derive(Parser, Debug)]
#[command(name = "wifipose", version, about = "Human pose estimation from WiFi channel state information")]
struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Render a synthetic scene and write it as a dataset directory.
    Synth,
    /// Train on the dataset; writes the best checkpoint and history.jsonl.
    Train,
    /// PCK on the test split; writes pck.txt and pck.json.
    Eval {
        /// Score landmark JSON lines from this file instead of running the network.
        #[arg(long)]
        predictions_from_file: Option<PathBuf>,
    },
    /// Run the network over a split and emit landmark JSON lines.
    Infer {
        #[arg(long, value_enum, default_value_t = SplitSel::Test)]
        split: SplitSel,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one skeleton SVG per landmark line into the output directory.
    Render {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Print the effective configuration as JSON.
    ShowConfig,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SplitSel {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o error at {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Core(Error::Config(_) | Error::Domain(_)) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.into(), source }
}

fn main() -> ExitCode {
    let cmd = config::add_override_args(Cli::command());
    let matches = match cmd.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("derive matches its own command");
    let result = config::resolve(cli.config.as_deref(), std::env::var(SEED_ENV).ok().as_deref(), &matches)
        .map_err(CliError::from)
        .and_then(|cfg| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cli.threads.max(1))
                .build_global()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
            run(&cli.command, &cfg)
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: &Cmd, cfg: &RunConfig) -> Result<(), CliError> {
    match cmd {
        Cmd::Synth => cmd_synth(cfg),
        Cmd::Train => cmd_train(cfg),
        Cmd::Eval { predictions_from_file } => cmd_eval(cfg, predictions_from_file.as_deref()),
        Cmd::Infer { split, out } => cmd_infer(cfg, *split, out.as_deref()),
        Cmd::Render { predictions } => cmd_render(cfg, predictions),
        Cmd::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(cfg).expect("config serializes"));
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    if !dir.is_dir() {
        fs::create_dir(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let data = synthesize(&cfg.scene, cfg.split.val_frac, cfg.split.test_frac)?;
    save_dataset(&data.samples, &data.manifest, &data.splits, &cfg.paths.dataset_dir)?;
    let m = &data.manifest;
    println!(
        "wrote {}: {} samples of {}x{}x{}, frame {}x{}, splits {}/{}/{}",
        cfg.paths.dataset_dir.display(),
        m.n_samples,
        m.antennas,
        m.subcarriers,
        m.packets_per_frame,
        m.frame_width,
        m.frame_height,
        data.splits.train.len(),
        data.splits.val.len(),
        data.splits.test.len()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(&cfg.paths.dataset_dir)?;
    ensure_dir(&cfg.paths.output_dir)?;
    let (params, history) = train_with(&data, &data.splits, &cfg.net, &cfg.train, |r| {
        eprintln!("epoch {:>3}  lr {:.3e}  train {:.4e}  val {:.4e}", r.epoch, r.lr, r.train_loss, r.val_loss);
    })?;
    save_checkpoint(&params, &cfg.paths.checkpoint)?;
    let path = cfg.paths.output_dir.join("history.jsonl");
    fs::write(&path, history.to_json_lines()).map_err(io_err(&path))?;
    println!(
        "best epoch {} (val {:.4e}); checkpoint {}",
        history.best_epoch,
        history.epochs[history.best_epoch].val_loss,
        cfg.paths.checkpoint.display()
    );
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<LandmarkRecord>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(read_landmark_lines(BufReader::new(file))?)
}

fn cmd_eval(cfg: &RunConfig, predictions: Option<&Path>) -> Result<(), CliError> {
    let data = load_dataset(&cfg.paths.dataset_dir)?;
    let ids = &data.splits.test;
    if ids.is_empty() {
        return Err(Error::Config("test split is empty".into()).into());
    }
    let preds = match predictions {
        Some(path) => {
            let by_frame: std::collections::HashMap<usize, PoseLandmarks> =
                read_records(path)?.into_iter().map(|r| (r.frame, r.points)).collect();
            ids.iter()
                .map(|&i| {
                    let frame = data.samples[i].frame_index;
                    by_frame.get(&frame).copied().ok_or_else(|| {
                        CliError::Usage(format!("{} has no prediction for test frame {frame}", path.display()))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => predict(&load_checkpoint::<f32>(&cfg.paths.checkpoint)?, &data, ids)?,
    };
    let gts: Vec<PoseLandmarks> = ids.iter().map(|&i| data.samples[i].annotation).collect();
    let report = pck(&preds, &gts, &cfg.pck)?;
    let table = report_table(&report, &JOINT_NAMES);
    ensure_dir(&cfg.paths.output_dir)?;
    let txt = cfg.paths.output_dir.join("pck.txt");
    fs::write(&txt, &table).map_err(io_err(&txt))?;
    let json = cfg.paths.output_dir.join("pck.json");
    let mut text = serde_json::to_string_pretty(&PckJson::from(&report)).expect("report serializes");
    text.push('\n');
    fs::write(&json, text).map_err(io_err(&json))?;
    print!("{table}");
    Ok(())
}

fn split_ids(data: &Dataset, sel: SplitSel) -> Vec<usize> {
    match sel {
        SplitSel::Train => data.splits.train.clone(),
        SplitSel::Val => data.splits.val.clone(),
        SplitSel::Test => data.splits.test.clone(),
        SplitSel::All => (0..data.samples.len()).collect(),
    }
}

fn cmd_infer(cfg: &RunConfig, sel: SplitSel, out: Option<&Path>) -> Result<(), CliError> {
    let data = load_dataset(&cfg.paths.dataset_dir)?;
    let params = load_checkpoint::<f32>(&cfg.paths.checkpoint)?;
    let ids = split_ids(&data, sel);
    let preds = predict(&params, &data, &ids)?;
    let records: Vec<LandmarkRecord> = ids
        .iter()
        .zip(preds)
        .map(|(&i, points)| LandmarkRecord { frame: data.samples[i].frame_index, points })
        .collect();
    match out {
        Some(path) => {
            let file = File::create(path).map_err(io_err(path))?;
            let mut w = BufWriter::new(file);
            write_landmark_lines(&mut w, &records).map_err(io_err(path))?;
            w.flush().map_err(io_err(path))
        }
        None => write_landmark_lines(io::stdout().lock(), &records).map_err(io_err(Path::new("<stdout>"))),
    }
}

fn cmd_render(cfg: &RunConfig, predictions: &Path) -> Result<(), CliError> {
    let records = read_records(predictions)?;
    ensure_dir(&cfg.paths.output_dir)?;
    for r in &records {
        let path = cfg.paths.output_dir.join(format!("frame_{:06}.svg", r.frame));
        let svg = render_skeleton_svg(&r.points, cfg.scene.frame_width, cfg.scene.frame_height);
        fs::write(&path, svg).map_err(io_err(&path))?;
    }
    println!("wrote {} SVG files to {}", records.len(), cfg.paths.output_dir.display());
    Ok(())
}
