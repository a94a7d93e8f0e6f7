use std::fmt::Write as _;
use std::path::Path;

use super::train::{train, TrainOptions};
use crate::config::{RunConfig, Variant};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, EvalMode};
use crate::model::Urscht;

/// Published full-scale scores, for side-by-side display only.
pub const REFERENCE_PSNR: [f64; 6] = [20.90, 22.32, 21.46, 21.35, 21.74, 22.32];
pub const REFERENCE_SSIM: [f64; 6] = [0.857, 0.871, 0.863, 0.85, 0.857, 0.862];

pub const LOSS_SETS: [&str; 3] = ["L_C", "L_C+L_M", "L_C+L_gd+L_M"];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub label: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Three module variants trained with the full loss, and Conv-typeI trained with three loss sets.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub module: Vec<AblationCell>,
    pub loss: Vec<AblationCell>,
}

fn cell_config(base: &RunConfig, variant: Variant, loss_set: usize) -> RunConfig {
    let mut cfg = base.clone();
    cfg.model.variant = variant;
    let w = &mut cfg.loss.weights;
    match loss_set {
        0 => (w.w2, w.w3) = (0.0, 0.0),
        1 => w.w2 = 0.0,
        _ => {}
    }
    cfg
}

fn run_cell(
    cfg: &RunConfig,
    train_pairs: &[ImagePair],
    eval_pairs: &[ImagePair],
    threads: usize,
) -> Result<(f64, f64)> {
    let outcome = train(cfg, train_pairs, &TrainOptions::default())?;
    let model = Urscht::new(cfg.model.clone())?;
    let report = evaluate_dataset(
        &model,
        &outcome.state.params,
        eval_pairs,
        EvalMode::FullReference,
        threads,
    )?;
    let mean = report.mean();
    match (mean.psnr, mean.ssim) {
        (Some(p), Some(s)) => Ok((p, s)),
        _ => Err(Error::data("ablation evaluation produced no scores")),
    }
}

/// Trains and scores every cell with the same seed and data; only the varied factor changes.
pub fn ablate(
    base: &RunConfig,
    train_pairs: &[ImagePair],
    eval_pairs: &[ImagePair],
    threads: usize,
) -> Result<AblationTable> {
    base.validate()?;
    let mut module = Vec::new();
    for v in Variant::ALL {
        let (psnr, ssim) = run_cell(&cell_config(base, v, 2), train_pairs, eval_pairs, threads)?;
        module.push(AblationCell {
            label: v.label().to_string(),
            psnr,
            ssim,
        });
    }
    let mut loss = Vec::new();
    for (i, label) in LOSS_SETS.iter().enumerate() {
        let (psnr, ssim) = if i == 2 {
            let full = &module[1];
            (full.psnr, full.ssim)
        } else {
            run_cell(
                &cell_config(base, Variant::ConvType1, i),
                train_pairs,
                eval_pairs,
                threads,
            )?
        };
        loss.push(AblationCell {
            label: label.to_string(),
            psnr,
            ssim,
        });
    }
    Ok(AblationTable { module, loss })
}

fn ordering(cells: &[AblationCell], key: impl Fn(&AblationCell) -> f64) -> String {
    let mut sorted: Vec<&AblationCell> = cells.iter().collect();
    sorted.sort_by(|a, b| key(b).total_cmp(&key(a)));
    sorted.iter().map(|c| c.label.as_str()).collect::<Vec<_>>().join(" > ")
}

impl AblationTable {
    fn cells(&self) -> impl Iterator<Item = &AblationCell> {
        self.module.iter().chain(&self.loss)
    }

    /// Rankings by PSNR and SSIM within each group.
    pub fn orderings(&self) -> Vec<String> {
        vec![
            format!("module PSNR: {}", ordering(&self.module, |c| c.psnr)),
            format!("module SSIM: {}", ordering(&self.module, |c| c.ssim)),
            format!("loss PSNR: {}", ordering(&self.loss, |c| c.psnr)),
            format!("loss SSIM: {}", ordering(&self.loss, |c| c.ssim)),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,cell,psnr,ssim,reference_psnr,reference_ssim\n");
        for (i, c) in self.cells().enumerate() {
            let group = if i < 3 { "module" } else { "loss" };
            writeln!(
                s,
                "{group},{},{:.6},{:.6},{:.2},{:.3}",
                c.label, c.psnr, c.ssim, REFERENCE_PSNR[i], REFERENCE_SSIM[i]
            )
            .unwrap();
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let labels: Vec<&str> = self.cells().map(|c| c.label.as_str()).collect();
        let mut s = String::new();
        writeln!(s, "| | Module | | | Loss Function | | |").unwrap();
        writeln!(s, "|---|---|---|---|---|---|---|").unwrap();
        writeln!(s, "| | {} |", labels.join(" | ")).unwrap();
        let row = |name: &str, vals: Vec<String>| format!("| {name} | {} |\n", vals.join(" | "));
        s += &row("PSNR", self.cells().map(|c| format!("{:.2}", c.psnr)).collect());
        s += &row("SSIM", self.cells().map(|c| format!("{:.3}", c.ssim)).collect());
        s += &row(
            "PSNR (reference)",
            REFERENCE_PSNR.iter().map(|v| format!("{v:.2}")).collect(),
        );
        s += &row(
            "SSIM (reference)",
            REFERENCE_SSIM.iter().map(|v| format!("{v:.3}")).collect(),
        );
        s.push('\n');
        s.push_str("Reference rows are published full-scale results, shown for comparison only.\n\n");
        for o in self.orderings() {
            writeln!(s, "- {o}").unwrap();
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        for (name, text) in [("ablation.csv", self.to_csv()), ("ablation.md", self.to_markdown())] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| crate::Error::io(&p, e))?;
        }
        Ok(())
    }
}
