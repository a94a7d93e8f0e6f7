use rayon::prelude::*;
use ursct_tensor::Tensor;

use super::{ms_ssim, psnr, ssim, uciqe, uiqm, MetricReport, MetricRow};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::losses::max_scales;
use crate::model::Urscht;
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// PSNR, SSIM and MS-SSIM against the reference.
    FullReference,
    /// UIQM and UCIQE of the enhanced image alone.
    NoReference,
}

fn score(pair: &ImagePair, out: &Tensor<f32>, mode: EvalMode) -> Result<MetricRow> {
    let mut row = MetricRow {
        image: pair.id.clone(),
        ..Default::default()
    };
    match mode {
        EvalMode::FullReference => {
            let reference = pair
                .reference
                .as_ref()
                .ok_or_else(|| Error::data(format!("no reference image for `{}`", pair.id)))?;
            row.psnr = Some(psnr(out, reference, 1.0)?);
            row.ssim = Some(ssim(out, reference)?);
            let [_, h, w] = out.shape().try_into().expect("metrics checked the shape");
            row.ms_ssim = max_scales(h, w).map(|s| ms_ssim(out, reference, s)).transpose()?;
        }
        EvalMode::NoReference => {
            row.uiqm = Some(uiqm(out)?);
            row.uciqe = Some(uciqe(out)?);
        }
    }
    Ok(row)
}

/// Scores `enhance(raw)` for every pair, `threads` images at a time; rows keep dataset order.
///
/// MS-SSIM uses as many pyramid levels (up to five) as the image size allows.
pub fn evaluate_with<E>(pairs: &[ImagePair], mode: EvalMode, threads: usize, enhance: E) -> Result<MetricReport>
where
    E: Fn(&Tensor<f32>) -> Result<Tensor<f32>> + Sync,
{
    if pairs.is_empty() {
        return Err(Error::data("evaluation dataset is empty"));
    }
    if mode == EvalMode::FullReference {
        if let Some(p) = pairs.iter().find(|p| p.reference.is_none()) {
            return Err(Error::data(format!("no reference image for `{}`", p.id)));
        }
    }
    let run = |p: &ImagePair| score(p, &enhance(&p.raw)?, mode);
    let rows: Result<Vec<MetricRow>> = if threads <= 1 {
        pairs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| pairs.par_iter().map(run).collect())
    };
    Ok(MetricReport { rows: rows? })
}

/// Enhances each raw image with the model (output clamped) and scores it.
pub fn evaluate_dataset(
    model: &Urscht,
    params: &ParamStore<f32>,
    pairs: &[ImagePair],
    mode: EvalMode,
    threads: usize,
) -> Result<MetricReport> {
    evaluate_with(pairs, mode, threads, |x| model.enhance_image(params, x))
}
