use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BoundingBox, Heatmap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// Negative relevance is clamped to zero before averaging.
    #[default]
    Positive,
    /// Signed relevance.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRatio {
    /// Mean outside relevance over mean inside relevance; `None` when the
    /// ratio is undefined (non-positive inside mean, or negative outside
    /// mean in signed mode).
    pub mu: Option<f64>,
    pub inside: usize,
    pub outside: usize,
    pub mean_in: f64,
    pub mean_out: f64,
}

/// `μ = mean_{q∉boxes} R(q) / mean_{p∈boxes} R(p)`, where the inside set is
/// the union of `boxes`.
pub fn context_ratio(h: &Heatmap, boxes: &[BoundingBox], mode: ContextMode) -> Result<ContextRatio> {
    if boxes.is_empty() {
        return Err(Error::EmptyInput("context ratio needs at least one box".into()));
    }
    for b in boxes {
        b.validate(h.width(), h.height())?;
    }
    let (mut sum_in, mut sum_out, mut inside, mut outside) = (0.0, 0.0, 0usize, 0usize);
    for y in 0..h.height() {
        for x in 0..h.width() {
            let mut v = h.get(x, y);
            if mode == ContextMode::Positive {
                v = v.max(0.0);
            }
            if boxes.iter().any(|b| b.contains(x, y)) {
                sum_in += v;
                inside += 1;
            } else {
                sum_out += v;
                outside += 1;
            }
        }
    }
    if outside == 0 {
        return Err(Error::Undefined("boxes cover the whole image".into()));
    }
    let mean_in = sum_in / inside as f64;
    let mean_out = sum_out / outside as f64;
    let mu = (mean_in > 0.0 && mean_out >= 0.0).then(|| mean_out / mean_in);
    Ok(ContextRatio { mu, inside, outside, mean_in, mean_out })
}

/// Heatmap of one image together with the boxes of the explained class.
#[derive(Debug, Clone)]
pub struct ContextSample {
    pub class: String,
    pub heatmap: Heatmap,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRow {
    pub class: String,
    /// Mean μ over images with a defined ratio; `None` when there are none.
    pub fv_mean: Option<f64>,
    pub fv_images: usize,
    pub fv_undefined: usize,
    pub nn_mean: Option<f64>,
    pub nn_images: usize,
    pub nn_undefined: usize,
}

fn mean_mu(samples: &[ContextSample], class: &str, mode: ContextMode) -> Result<(Option<f64>, usize, usize)> {
    let (mut sum, mut n, mut undefined) = (0.0, 0usize, 0usize);
    for s in samples.iter().filter(|s| s.class == class) {
        match context_ratio(&s.heatmap, &s.boxes, mode)?.mu {
            Some(mu) => {
                sum += mu;
                n += 1;
            }
            None => undefined += 1,
        }
    }
    Ok(((n > 0).then(|| sum / n as f64), n, undefined))
}

/// Per-class mean μ for the FV and NN heatmaps of true-positive images.
pub fn context_table(classes: &[String], fv: &[ContextSample], nn: &[ContextSample], mode: ContextMode) -> Result<Vec<ContextRow>> {
    classes
        .iter()
        .map(|c| {
            let (fv_mean, fv_images, fv_undefined) = mean_mu(fv, c, mode)?;
            let (nn_mean, nn_images, nn_undefined) = mean_mu(nn, c, mode)?;
            Ok(ContextRow { class: c.clone(), fv_mean, fv_images, fv_undefined, nn_mean, nn_images, nn_undefined })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat(values: Vec<f64>) -> Heatmap {
        Heatmap::new(4, 1, values).unwrap()
    }

    fn boxes() -> Vec<BoundingBox> {
        vec![BoundingBox::new("a", 0, 0, 1, 0).unwrap()]
    }

    #[test]
    fn inside_only_gives_zero() {
        let r = context_ratio(&heat(vec![1.0, 2.0, 0.0, -1.0]), &boxes(), ContextMode::Positive).unwrap();
        assert_eq!(r.mu, Some(0.0));
        assert_eq!((r.inside, r.outside), (2, 2));
    }

    #[test]
    fn uniform_gives_one() {
        let r = context_ratio(&heat(vec![0.3; 4]), &boxes(), ContextMode::All).unwrap();
        assert_eq!(r.mu, Some(1.0));
    }

    #[test]
    fn outside_only_is_undefined() {
        let r = context_ratio(&heat(vec![0.0, 0.0, 1.0, 1.0]), &boxes(), ContextMode::Positive).unwrap();
        assert_eq!(r.mu, None);
    }

    #[test]
    fn full_cover_is_error() {
        let all = vec![BoundingBox::new("a", 0, 0, 3, 0).unwrap()];
        assert!(matches!(context_ratio(&heat(vec![1.0; 4]), &all, ContextMode::Positive), Err(Error::Undefined(_))));
    }

    #[test]
    fn identical_heatmaps_identical_columns() {
        let s = ContextSample { class: "a".into(), heatmap: heat(vec![1.0, 1.0, 0.5, 0.0]), boxes: boxes() };
        let rows = context_table(&["a".into(), "b".into()], std::slice::from_ref(&s), std::slice::from_ref(&s), ContextMode::Positive).unwrap();
        assert_eq!(rows[0].fv_mean, rows[0].nn_mean);
        assert_eq!(rows[0].fv_mean, Some(0.25));
        assert_eq!(rows[1].fv_mean, None);
    }
}
