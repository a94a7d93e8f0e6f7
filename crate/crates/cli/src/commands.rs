use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ursct::config::Variant;
use ursct::data::{list_images, load_image, resize_bilinear, save_image, DatasetIndex, ImagePair};
use ursct::gradcheck::{block_suite, gradcheck_model_config, loss_suite, network_case, Suite};
use ursct::metrics::{evaluate_dataset, EvalMode};
use ursct::trainer::{ablate, load_checkpoint, train, TrainOptions, TrainState};
use ursct::{Category, ModelConfig, RunConfig, Urscht};
use ursct_tensor::gradcheck::{tensor_op_suite, GradcheckOptions};

use crate::{Cli, Command, ConfigArgs, GradModule};

pub const SEED_ENV: &str = "URSCT_SEED";

/// A failed invocation: exit code plus a one-line `error[category]: message` report.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    category: &'static str,
    msg: String,
}

impl Failure {
    pub fn usage(rendered: &str) -> Self {
        let msg = rendered
            .lines()
            .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        Self {
            code: 2,
            category: "usage",
            msg: msg.trim_start_matches("error: ").to_string(),
        }
    }

    fn config(msg: impl Into<String>) -> Self {
        ursct::Error::config(msg).into()
    }

    pub fn report(&self) -> ExitCode {
        let msg = self.msg.lines().map(str::trim).collect::<Vec<_>>().join("; ");
        eprintln!("error[{}]: {msg}", self.category);
        ExitCode::from(self.code)
    }
}

impl From<ursct::Error> for Failure {
    fn from(e: ursct::Error) -> Self {
        let category = e.category();
        let code = match category {
            Category::Config => 3,
            Category::Data => 4,
            Category::Numeric => 5,
        };
        Self {
            code,
            category: category.as_str(),
            msg: e.to_string(),
        }
    }
}

impl From<ursct_tensor::Error> for Failure {
    fn from(e: ursct_tensor::Error) -> Self {
        ursct::Error::from(e).into()
    }
}

type Result<T> = std::result::Result<T, Failure>;

pub fn run(cli: Cli) -> Result<()> {
    let threads = usize::from(cli.threads);
    match cli.command {
        Command::Train { config, resume, quiet } => run_train(&config, resume.as_deref(), quiet),
        Command::Enhance {
            checkpoint,
            input,
            output,
        } => run_enhance(&checkpoint, &input, &output),
        Command::Eval {
            checkpoint,
            dataset,
            no_reference,
            report,
            ..
        } => {
            let mode = if no_reference {
                EvalMode::NoReference
            } else {
                EvalMode::FullReference
            };
            run_eval(&checkpoint, &dataset, mode, &report, threads)
        }
        Command::Ablate { config, out } => run_ablate(&config, &out, threads),
        Command::Gradcheck { module } => run_gradcheck(module),
    }
}

/// File values, then `--set` overrides in order, then the environment seed if none was given.
fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if cfg.train.seed.is_none() {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Failure::config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
            cfg.train.seed = Some(seed);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn echo_config(title: &str, text: &str) {
    eprintln!("{title}:");
    for line in text.lines() {
        eprintln!("  {line}");
    }
}

fn load_pairs(root: &Path, model: &ModelConfig, require_reference: bool) -> Result<Vec<ImagePair>> {
    let index = DatasetIndex::open(root, (model.image_height, model.image_width), require_reference)?;
    Ok(index.load()?)
}

fn run_train(args: &ConfigArgs, resume: Option<&Path>, quiet: bool) -> Result<()> {
    let cfg = resolve_config(args)?;
    echo_config("effective config", &cfg.to_text());
    let resume = resume.map(load_checkpoint).transpose()?;
    let pairs = match (&cfg.data.train_dir, cfg.train.epochs) {
        (_, 0) => Vec::new(),
        (Some(dir), _) => load_pairs(dir, &cfg.model, true)?,
        (None, _) => return Err(Failure::config("data.train_dir is not set")),
    };
    let opts = TrainOptions {
        out_dir: Some(cfg.train.out_dir.clone()),
        resume,
        stop_after: None,
        verbose: !quiet,
    };
    let start = Instant::now();
    let outcome = train(&cfg, &pairs, &opts)?;
    let last = outcome
        .epochs
        .last()
        .map_or(String::from("-"), |e| format!("{:.6}", e.losses.total));
    println!(
        "trained to epoch {} ({} steps) in {:.1}s; final L_sum {last}; checkpoint {}",
        outcome.state.epoch,
        outcome.state.step,
        start.elapsed().as_secs_f64(),
        cfg.train.out_dir.join("last.ursct").display()
    );
    Ok(())
}

fn model_from(state: &TrainState) -> Result<(RunConfig, Urscht)> {
    let cfg = RunConfig::parse_str(&state.config_text)?;
    let model = Urscht::new(cfg.model.clone())?;
    Ok((cfg, model))
}

fn run_enhance(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let state = load_checkpoint(checkpoint)?;
    let (cfg, model) = model_from(&state)?;
    echo_config("checkpoint config", &cfg.to_text());
    let files: Vec<(String, PathBuf)> = if input.is_dir() {
        list_images(input)?.into_iter().collect()
    } else if input.is_file() {
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        vec![(stem, input.to_path_buf())]
    } else {
        return Err(ursct::Error::data(format!("{}: no such file or directory", input.display())).into());
    };
    if files.is_empty() {
        return Err(ursct::Error::data(format!("{}: no PNG or JPEG images", input.display())).into());
    }
    std::fs::create_dir_all(output).map_err(|e| ursct::Error::io(output, e))?;
    let (mh, mw) = (cfg.model.image_height, cfg.model.image_width);
    for (stem, path) in &files {
        let img = load_image(path)?;
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let out = model.enhance_image(&state.params, &resize_bilinear(&img, mh, mw)?)?;
        let out = if (h, w) == (mh, mw) {
            out
        } else {
            resize_bilinear(&out, h, w)?
        };
        let dest = output.join(format!("{stem}.png"));
        save_image(&out, &dest)?;
        println!("{}", dest.display());
    }
    Ok(())
}

fn run_eval(checkpoint: &Path, dataset: &Path, mode: EvalMode, report: &Path, threads: usize) -> Result<()> {
    let state = load_checkpoint(checkpoint)?;
    let (cfg, model) = model_from(&state)?;
    echo_config("checkpoint config", &cfg.to_text());
    eprintln!("  eval.mode = {mode:?}\n  eval.threads = {threads}");
    let pairs = load_pairs(dataset, &cfg.model, mode == EvalMode::FullReference)?;
    let result = evaluate_dataset(&model, &state.params, &pairs, mode, threads)?;
    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| ursct::Error::io(parent, e))?;
    }
    let csv = result.to_csv();
    std::fs::write(report, &csv).map_err(|e| ursct::Error::io(report, e))?;
    print!("{}", csv.lines().last().map(|l| format!("{l}\n")).unwrap_or_default());
    Ok(())
}

fn run_ablate(args: &ConfigArgs, out: &Path, threads: usize) -> Result<()> {
    let cfg = resolve_config(args)?;
    echo_config("effective config", &cfg.to_text());
    let train_dir = cfg
        .data
        .train_dir
        .as_ref()
        .ok_or_else(|| Failure::config("data.train_dir is not set"))?;
    let train_pairs = load_pairs(train_dir, &cfg.model, true)?;
    let eval_pairs = match &cfg.data.eval_dir {
        Some(dir) => load_pairs(dir, &cfg.model, true)?,
        None => train_pairs.clone(),
    };
    let table = ablate(&cfg, &train_pairs, &eval_pairs, threads)?;
    table.write(out)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn run_gradcheck(module: GradModule) -> Result<()> {
    let opts = GradcheckOptions::default();
    let mut results: Suite = Vec::new();
    if matches!(module, GradModule::All | GradModule::Tensor) {
        results.extend(tensor_op_suite(&opts)?.into_iter().map(|(n, r)| (format!("op/{n}"), r)));
    }
    if matches!(module, GradModule::All | GradModule::Model) {
        results.extend(block_suite(&opts)?);
        let net_opts = GradcheckOptions {
            tol: 1e-4,
            probes_per_input: 1,
            ..opts.clone()
        };
        let small = gradcheck_model_config(Variant::ConvType1);
        results.push(("network/small".into(), network_case(&small, &net_opts)?));
        results.push(("network/tiny".into(), network_case(&ModelConfig::tiny(), &net_opts)?));
    }
    if matches!(module, GradModule::All | GradModule::Losses) {
        results.extend(loss_suite(&opts)?);
    }
    println!(
        "{:<32} {:>12} {:>12} {:>7}  result",
        "check", "max_rel_err", "max_abs_err", "probes"
    );
    for (name, r) in &results {
        println!(
            "{name:<32} {:>12.3e} {:>12.3e} {:>7}  {}",
            r.max_rel_err,
            r.max_abs_err,
            r.probes,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, r)| !r.pass)
        .map(|(n, _)| n.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(ursct::Error::Numeric(format!("gradient check failed for {}", failed.join(", "))).into())
    }
}
