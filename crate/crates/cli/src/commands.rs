use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mbt_core::autograd::fault;
use mbt_core::data::{synth_dataset, Image, PairDataset};
use mbt_core::infer::infer_image;
use mbt_core::metrics::{evaluate, ColorSpace, MetricOptions};
use mbt_core::model::{module_param_counts, param_count, ModelConfig};
use mbt_core::train::{Checkpoint, Ema, EpochRecord, Trainer};
use mbt_core::verify::{check_block, Block, GradcheckOptions, GRADCHECK_TOLERANCE};
use mbt_core::Error;

use crate::config::RunConfig;
use crate::{EvalArgs, GradcheckArgs, InferArgs, InfoArgs, SynthArgs, TrainArgs};

/// Parameter count of the reference implementation.
pub const REFERENCE_PARAMS: usize = 3_210_000;

#[derive(Debug)]
pub enum Failure {
    /// A check ran and did not pass.
    Verify(String),
    /// Bad flags, config, paths or inputs.
    Usage(String),
    /// Training left the finite range.
    Diverged(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Verify(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Verify(m) | Failure::Usage(m) | Failure::Diverged(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => Failure::Diverged(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(format!("io error: {e}"))
    }
}

type CmdResult = Result<(), Failure>;

/// Caps the worker pool when MBT_THREADS is set.
pub fn init_threads() -> CmdResult {
    let Ok(v) = std::env::var("MBT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("MBT_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot size thread pool: {e}")))
}

/// Loads a checkpoint for inference, accepting either float width.
fn load_for_inference(path: &Path) -> Result<Checkpoint<f32>, Failure> {
    let ckpt = match Checkpoint::<f32>::load(path) {
        Err(Error::Type(_)) => {
            let c = Checkpoint::<f64>::load(path)?;
            Checkpoint {
                model: c.model,
                train: c.train,
                params: c.params.cast(),
                ema: c.ema.map(|e| Ema::from_shadow(e.shadow().cast(), e.decay)),
                adam: None,
                epoch: c.epoch,
                step: c.step,
                losses: c.losses,
            }
        }
        other => other.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
    };
    ckpt.check_layout()?;
    Ok(ckpt)
}

fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch:04}.mbt")
}

pub fn train(args: TrainArgs) -> CmdResult {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply_overrides(&args.overrides)?;
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    let train_dir = cfg
        .train_dir
        .clone()
        .ok_or_else(|| Failure::Usage("train_dir is not set".into()))?;
    let data = PairDataset::load(&train_dir, cfg.model.scale)?;
    let val = match &cfg.val_dir {
        Some(d) => Some(PairDataset::load(d, cfg.model.scale)?),
        None => None,
    };

    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::<f32>::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            if ckpt.model != cfg.model {
                return Err(Failure::Usage(format!(
                    "model config of {} differs from the run config",
                    path.display()
                )));
            }
            Trainer::resume(ckpt, cfg.train.clone(), &data, val.as_ref())?
        }
        None => Trainer::new(cfg.model.clone(), cfg.train.clone(), &data, val.as_ref())?,
    };

    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("resolved_config.txt"), cfg.to_kv())?;
    let start = trainer.epoch();
    let epochs_csv = out.join("epochs.csv");
    let steps_csv = out.join("steps.csv");
    rewrite_epoch_log(&epochs_csv, start)?;
    let mut steps_log = String::from("step,epoch,loss\n");
    let per_epoch = trainer.steps_per_epoch();
    for (i, l) in trainer.losses().iter().enumerate() {
        let _ = writeln!(steps_log, "{},{},{l}", i, i / per_epoch);
    }
    fs::write(&steps_csv, steps_log)?;

    println!(
        "training {} params for epochs {start}..{} ({per_epoch} steps/epoch, {} images)",
        param_count(&cfg.model),
        cfg.train.epochs,
        data.len()
    );
    while !trainer.done() {
        let logged = trainer.losses().len();
        let rec = match trainer.run_epoch() {
            Ok(r) => r,
            Err(e) => {
                let _ = trainer.checkpoint().save(&out.join("diverged.mbt"));
                return Err(e.into());
            }
        };
        append(&epochs_csv, &format!("{}\n", rec.csv_row()))?;
        let mut rows = String::new();
        for (i, l) in trainer.losses().iter().enumerate().skip(logged) {
            let _ = writeln!(rows, "{i},{},{l}", rec.epoch);
        }
        append(&steps_csv, &rows)?;
        print_epoch(&rec);
        let done = trainer.epoch();
        let every = cfg.train.checkpoint_every;
        if (every > 0 && done % every == 0) || trainer.done() {
            let ckpt = trainer.checkpoint();
            ckpt.save(&out.join(checkpoint_name(done)))?;
            ckpt.save(&out.join("last.mbt"))?;
        }
    }
    println!("done: {}", out.join("last.mbt").display());
    Ok(())
}

fn print_epoch(rec: &EpochRecord) {
    let val = rec.val_psnr.map(|v| format!(" val_psnr {v:.3}")).unwrap_or_default();
    println!("epoch {:4} lr {:.2e} loss {:.6}{val}", rec.epoch, rec.lr, rec.mean_loss);
}

/// Starts a fresh epoch log, or keeps the rows before `start` when resuming.
fn rewrite_epoch_log(path: &Path, start: usize) -> CmdResult {
    let mut text = format!("{}\n", EpochRecord::CSV_HEADER);
    if start > 0 && path.is_file() {
        for line in fs::read_to_string(path)?.lines().skip(1) {
            let epoch = line.split(',').next().and_then(|e| e.parse::<usize>().ok());
            if epoch.is_some_and(|e| e < start) {
                text.push_str(line);
                text.push('\n');
            }
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn append(path: &Path, text: &str) -> CmdResult {
    let mut f = OpenOptions::new().append(true).open(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let ckpt = load_for_inference(&args.ckpt)?;
    let data = PairDataset::load(&args.data, ckpt.model.scale)?;
    let opts = MetricOptions {
        shave: args.shave,
        color: if args.y_channel { ColorSpace::Y } else { ColorSpace::Rgb },
    };
    let report = evaluate(ckpt.inference_params(!args.live), &ckpt.model, &data, &opts)?;
    print!("{}", report.to_table());
    if let Some(csv) = &args.csv {
        fs::write(csv, report.to_csv())?;
    }
    Ok(())
}

pub fn infer(args: InferArgs) -> CmdResult {
    let ckpt = load_for_inference(&args.ckpt)?;
    let img = Image::read(&args.input)?;
    let sr = infer_image(ckpt.inference_params(!args.live), &ckpt.model, &img)?;
    sr.write(&args.output)?;
    println!(
        "{}x{} -> {}x{}: {}",
        img.width(),
        img.height(),
        sr.width(),
        sr.height(),
        args.output.display()
    );
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CmdResult {
    let blocks = match &args.block {
        Some(b) => vec![b.parse::<Block>()?],
        None => Block::ALL.to_vec(),
    };
    if args.corrupt_backward {
        fault::set_corrupt_gelu_backward(true);
    }
    let opts = GradcheckOptions { seed: args.seed, samples_per_tensor: args.samples, ..Default::default() };
    let mut failed = Vec::new();
    for block in blocks {
        let t = std::time::Instant::now();
        let report = check_block(block, &opts)?;
        for g in &report.groups {
            if args.verbose || !g.passed() {
                let mark = if g.passed() { "ok" } else { "FAIL" };
                println!("  {block:<5} {:<40} n={:<4} rel_error {:.3e}  {mark}", g.name, g.checked, g.rel_error);
            }
        }
        let status = if report.passed() { "pass" } else { "FAIL" };
        println!(
            "{block:<5} {status}  groups {:3}  max rel_error {:.3e}  ({:.1}s)",
            report.groups.len(),
            report.max_error(),
            t.elapsed().as_secs_f64()
        );
        for g in report.failures() {
            failed.push(format!("{block}:{}", g.name));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(format!(
            "gradient check failed (tolerance {GRADCHECK_TOLERANCE:e}) for {}",
            failed.join(", ")
        )))
    }
}

pub fn info(args: InfoArgs) -> CmdResult {
    let (model, stored) = match (&args.source.ckpt, &args.source.config) {
        (Some(p), _) => {
            let ckpt = load_for_inference(p)?;
            if !args.overrides.is_empty() {
                return Err(Failure::Usage("--set cannot change a checkpoint's config".into()));
            }
            let n = ckpt.params.num_params();
            (ckpt.model, Some(n))
        }
        (None, Some(p)) => {
            let mut cfg = RunConfig::load(p)?;
            cfg.apply_overrides(&args.overrides)?;
            (cfg.model, None)
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    model.validate()?;
    print!("{}", info_text(&model, stored));
    Ok(())
}

fn info_text(model: &ModelConfig, stored: Option<usize>) -> String {
    let mut s = String::from("config\n");
    for line in model.to_kv().lines() {
        let _ = writeln!(s, "  {line}");
    }
    s.push_str("parameters\n");
    for (name, n) in module_param_counts(model) {
        let _ = writeln!(s, "  {name:<18} {n:>10}");
    }
    let total = param_count(model);
    let _ = writeln!(s, "  {:<18} {total:>10}", "total");
    if let Some(n) = stored {
        let _ = writeln!(s, "  {:<18} {n:>10}", "checkpoint");
    }
    let _ = writeln!(
        s,
        "ratio vs reference {:.2}M: {:.3}",
        REFERENCE_PARAMS as f64 / 1e6,
        total as f64 / REFERENCE_PARAMS as f64
    );
    s
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let data = synth_dataset(args.count, args.size, args.scale, args.seed)?;
    data.save(&args.out)?;
    let sub: PathBuf = PairDataset::lr_dir(&args.out, args.scale);
    println!(
        "wrote {} pairs to {} and {}",
        data.len(),
        args.out.join("hr").display(),
        sub.display()
    );
    Ok(())
}
