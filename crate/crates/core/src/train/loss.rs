use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::real::Real;

/// Mean squared error over all ray-colour components and its gradient
/// with respect to the rendered colours.
pub fn mse_loss<R: Real>(rendered: &[[R; 3]], truth: &[[R; 3]]) -> Result<(R, Vec<[R; 3]>)> {
    if rendered.len() != truth.len() {
        return Err(Error::Argument(format!(
            "batch sizes differ: {} rendered vs {} truth",
            rendered.len(),
            truth.len()
        )));
    }
    if rendered.is_empty() {
        return Ok((R::zero(), Vec::new()));
    }
    let count = R::c(3.0 * rendered.len() as f64);
    let mut loss = R::zero();
    let grad = rendered
        .iter()
        .zip(truth)
        .map(|(r, t)| {
            [0, 1, 2].map(|k| {
                let d = r[k] - t[k];
                loss += d * d;
                (d + d) / count
            })
        })
        .collect();
    Ok((loss / count, grad))
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Argument(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / MSE)` for intensities in `[0, 1]`; identical images give
/// `+inf`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// `10 log10(1 / mse)`, `+inf` at zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Mean per-view PSNR. Infinite entries are left out of the mean (with a
/// warning); if every entry is infinite the result is infinite.
pub fn scene_psnr(truth: &[ImageBuffer], rendered: &[ImageBuffer]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Argument("no views to compare".into()));
    }
    if truth.len() != rendered.len() {
        return Err(Error::Argument(format!(
            "view counts differ: {} truth vs {} rendered",
            truth.len(),
            rendered.len()
        )));
    }
    let values = truth.iter().zip(rendered).map(|(a, b)| psnr(a, b)).collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < values.len() {
        log::warn!("{} of {} views match exactly and are excluded from the mean PSNR", values.len() - finite.len(), values.len());
    }
    if finite.is_empty() {
        return Ok(f64::INFINITY);
    }
    Ok(finite.iter().sum::<f64>() / finite.len() as f64)
}

pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}
