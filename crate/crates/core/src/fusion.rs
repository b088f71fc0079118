//! Twin-head pseudo-labelling.
//!
//! Two probability maps of the same target image (the second computed on a
//! geometrically transformed view and mapped back) are fused by a per-class
//! maximum. The fused map yields the pseudo-label by argmax and a confidence
//! share that weights pseudo-labelled pixels in the mixed loss.

use serde::Serialize;

use crate::augment::{apply_geometric, apply_photometric, GeometricTransform, PhotometricParams};
use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, Grid, Image, LabelMap, ProbMap, IGNORE};
use crate::himix::MixMask;

/// Default confidence threshold on the top class probability.
pub const DEFAULT_TAU: f32 = 0.968;

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FusionConfig {
    pub tau: f32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

impl FusionConfig {
    pub fn new(tau: f32) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidParameter(format!("tau must be in (0, 1), got {tau}")));
        }
        Ok(Self { tau })
    }
}

/// Per-pixel loss weights.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl WeightMap {
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Uniform weights of 1.
    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1.0; height * width],
        }
    }

    pub fn from_values(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let w = Self {
            height,
            width,
            data,
        };
        w.validate()?;
        Ok(w)
    }
}

impl Grid for WeightMap {
    type Elem = f32;

    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn channels(&self) -> usize {
        1
    }

    fn elems(&self) -> &[f32] {
        &self.data
    }

    fn rebuild(&self, height: usize, width: usize, elems: Vec<f32>) -> Self {
        Self {
            height,
            width,
            data: elems,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.data.len() != self.height * self.width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} weight map with {} entries",
                self.height,
                self.width,
                self.data.len()
            )));
        }
        if let Some(v) = self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("weight {v} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Element-wise maximum of two maps. The result is not renormalized.
pub fn fuse_probabilities(p1: &ProbMap, p2: &ProbMap) -> Result<ProbMap> {
    ensure_same_shape("fused maps", p1.shape(), p2.shape())?;
    if p1.num_classes() != p2.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "fused maps: {} vs {} classes",
            p1.num_classes(),
            p2.num_classes()
        )));
    }
    let data = p1.data().iter().zip(p2.data()).map(|(a, b)| a.max(*b)).collect();
    ProbMap::new(p1.height(), p1.width(), p1.num_classes(), data, false)
}

/// Index of the largest entry; the lowest index wins ties.
fn argmax(px: &[f32]) -> (usize, f32) {
    let mut best = (0, px[0]);
    for (c, &v) in px.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (c, v);
        }
    }
    best
}

pub fn pseudo_label(p: &ProbMap) -> LabelMap {
    let data = p.pixels().map(|px| argmax(px).0 as u8).collect();
    LabelMap::new(p.height(), p.width(), p.num_classes() as u8, data)
        .expect("probability map shape is already valid")
}

/// Share of pixels whose top class probability is strictly above `tau`.
pub fn confidence_fraction(p: &ProbMap, cfg: &FusionConfig) -> f64 {
    let confident = p.pixels().filter(|px| argmax(px).1 > cfg.tau).count();
    confident as f64 / p.len_pixels() as f64
}

/// 1 on source pixels, `fraction` on pseudo-labelled target pixels.
pub fn weight_map(mask: &MixMask, fraction: f64) -> Result<WeightMap> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "confidence fraction {fraction} outside [0, 1]"
        )));
    }
    let target = fraction as f32;
    let data = mask
        .data()
        .iter()
        .map(|&m| if m != 0 { 1.0 } else { target })
        .collect();
    Ok(WeightMap {
        height: mask.height(),
        width: mask.width(),
        data,
    })
}

/// Weighted mean of `-ln p[true class]` over non-ignore pixels. Returns 0 when
/// every pixel is ignored.
pub fn weighted_cross_entropy(pred: &ProbMap, labels: &LabelMap, weights: &WeightMap) -> Result<f64> {
    ensure_same_shape("prediction vs labels", pred.shape(), labels.shape())?;
    ensure_same_shape("prediction vs weights", pred.shape(), weights.shape())?;
    let c = pred.num_classes();
    let mut total = 0.0f64;
    let mut counted = 0usize;
    for (i, ((px, &y), &w)) in pred
        .pixels()
        .zip(labels.data())
        .zip(weights.data())
        .enumerate()
    {
        if y == IGNORE {
            continue;
        }
        if y as usize >= c {
            return Err(Error::ClassOutOfRange {
                value: y,
                num_classes: c.min(254) as u8,
                row: i / labels.width(),
                col: i % labels.width(),
            });
        }
        let p = (px[y as usize] as f64).max(LOG_CLAMP);
        total += w as f64 * -p.ln();
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

/// Which of the two decoder heads a prediction is requested from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    One,
    Two,
}

/// Anything that produces class probabilities for an image.
///
/// `view` is the geometric transform already applied to `image` relative to
/// the original frame; real networks ignore it, simulated ones use it to
/// align their reference labels.
pub trait Segmenter {
    fn segment(&self, head: Head, image: &Image, view: &GeometricTransform) -> Result<ProbMap>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    pub labels: LabelMap,
    pub fraction: f64,
    pub fused: ProbMap,
}

/// Head one on the plain image, head two on the augmented view, the second
/// output mapped back by the inverse transform, then fusion, argmax and the
/// confidence share. Only the geometric part of the view is undone.
pub fn generate_pseudo_label_pair<S: Segmenter + ?Sized>(
    segmenter: &S,
    x_t: &Image,
    geometric: &GeometricTransform,
    photometric: &PhotometricParams,
    cfg: &FusionConfig,
) -> Result<PseudoLabels> {
    let p1 = segmenter.segment(Head::One, x_t, &GeometricTransform::IDENTITY)?;
    ensure_same_shape("head one output vs image", p1.shape(), x_t.shape())?;

    let view = apply_photometric(photometric, &apply_geometric(geometric, x_t));
    let p2 = segmenter.segment(Head::Two, &view, geometric)?;
    ensure_same_shape("head two output vs view", p2.shape(), view.shape())?;
    let p2 = apply_geometric(&geometric.inverse(), &p2);

    let fused = fuse_probabilities(&p1, &p2)?;
    Ok(PseudoLabels {
        labels: pseudo_label(&fused),
        fraction: confidence_fraction(&fused, cfg),
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::RngState;

    fn pmap(h: usize, w: usize, c: usize, data: Vec<f32>) -> ProbMap {
        ProbMap::new(h, w, c, data, true).unwrap()
    }

    fn random_pmap(seed: u64, h: usize, w: usize, c: usize) -> ProbMap {
        let mut r = RngState::new(seed).rng();
        let mut data = Vec::with_capacity(h * w * c);
        for _ in 0..h * w {
            let raw: Vec<f32> = (0..c).map(|_| r.gen::<f32>() + 1e-3).collect();
            let sum: f32 = raw.iter().sum();
            data.extend(raw.iter().map(|v| v / sum));
        }
        ProbMap::new(h, w, c, data, true).unwrap()
    }

    #[test]
    fn fuse_pixel_example() {
        let p1 = pmap(1, 1, 2, vec![0.7, 0.3]);
        let p2 = pmap(1, 1, 2, vec![0.2, 0.8]);
        let f = fuse_probabilities(&p1, &p2).unwrap();
        assert_eq!(f.data(), &[0.7, 0.8]);
        assert!(!f.is_normalized());
        f.validate().unwrap();
    }

    #[test]
    fn fuse_idempotent_and_dominant() {
        let p = random_pmap(1, 4, 4, 7);
        assert_eq!(fuse_probabilities(&p, &p).unwrap().data(), p.data());
        let q = random_pmap(2, 4, 4, 7);
        let f = fuse_probabilities(&p, &q).unwrap();
        for ((&a, &b), &m) in p.data().iter().zip(q.data()).zip(f.data()) {
            assert!(m >= a && m >= b);
            assert!(m == a || m == b);
        }
    }

    #[test]
    fn fuse_shape_mismatch() {
        let p = random_pmap(1, 2, 2, 7);
        let q = random_pmap(1, 2, 3, 7);
        assert!(fuse_probabilities(&p, &q).is_err());
        let r = random_pmap(1, 2, 2, 6);
        assert!(fuse_probabilities(&p, &r).is_err());
    }

    #[test]
    fn argmax_examples() {
        let one_hot = pmap(1, 1, 7, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(pseudo_label(&one_hot).data(), &[2]);
        let uniform = pmap(1, 1, 7, vec![1.0 / 7.0; 7]);
        assert_eq!(pseudo_label(&uniform).data(), &[0]);
    }

    #[test]
    fn argmax_matches_linear_scan() {
        let p = random_pmap(3, 8, 8, 7);
        let labels = pseudo_label(&p);
        for (i, px) in p.pixels().enumerate() {
            let max = px.iter().cloned().fold(f32::MIN, f32::max);
            let first = px.iter().position(|&v| v == max).unwrap();
            assert_eq!(labels.data()[i] as usize, first);
        }
    }

    #[test]
    fn confidence_examples() {
        let cfg = FusionConfig::default();
        let y = LabelMap::new(2, 2, 7, vec![0, 3, 6, 2]).unwrap();
        assert_eq!(confidence_fraction(&ProbMap::one_hot(&y), &cfg), 1.0);
        let uniform = pmap(2, 2, 7, vec![1.0 / 7.0; 28]);
        assert_eq!(confidence_fraction(&uniform, &cfg), 0.0);

        let mut data = Vec::new();
        for i in 0..4 {
            if i % 2 == 0 {
                data.extend([0.99, 0.01]);
            } else {
                data.extend([0.5, 0.5]);
            }
        }
        assert_eq!(confidence_fraction(&pmap(2, 2, 2, data), &cfg), 0.5);
    }

    #[test]
    fn confidence_threshold_is_strict() {
        let p = pmap(1, 1, 2, vec![0.75, 0.25]);
        assert_eq!(confidence_fraction(&p, &FusionConfig::new(0.75).unwrap()), 0.0);
        assert_eq!(confidence_fraction(&p, &FusionConfig::new(0.7).unwrap()), 1.0);
    }

    #[test]
    fn tau_range() {
        assert!(FusionConfig::new(0.0).is_err());
        assert!(FusionConfig::new(1.0).is_err());
        assert_eq!(FusionConfig::default().tau, 0.968);
    }

    #[test]
    fn weight_map_cases() {
        let ones = MixMask::filled(2, 2, true).unwrap();
        assert!(weight_map(&ones, 0.3).unwrap().data().iter().all(|&w| w == 1.0));
        let zeros = MixMask::filled(2, 2, false).unwrap();
        assert!(weight_map(&zeros, 0.25).unwrap().data().iter().all(|&w| w == 0.25));
        let mixed = MixMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let w = weight_map(&mixed, 0.4).unwrap();
        for (i, &v) in w.data().iter().enumerate() {
            assert_eq!(v, if mixed.is_source(i) { 1.0 } else { 0.4f32 });
        }
        assert!(weight_map(&mixed, 1.5).is_err());
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let y = LabelMap::new(1, 1, 2, vec![0]).unwrap();
        let w = WeightMap::ones(1, 1);
        let sure = pmap(1, 1, 2, vec![1.0, 0.0]);
        assert_eq!(weighted_cross_entropy(&sure, &y, &w).unwrap(), 0.0);
        let coin = pmap(1, 1, 2, vec![0.5, 0.5]);
        let loss = weighted_cross_entropy(&coin, &y, &w).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_two_pixel_weighted_mean() {
        let y = LabelMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let p = pmap(1, 2, 2, vec![0.8, 0.2, 0.4, 0.6]);
        let w = WeightMap::from_values(1, 2, vec![1.0, 0.5]).unwrap();
        let expected = (-(0.8f32 as f64).ln() + 0.5 * -(0.6f32 as f64).ln()) / 2.0;
        let loss = weighted_cross_entropy(&p, &y, &w).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_ignores_void_and_clamps() {
        let y = LabelMap::new(1, 2, 2, vec![IGNORE, 1]).unwrap();
        let p = pmap(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let w = WeightMap::ones(1, 2);
        let loss = weighted_cross_entropy(&p, &y, &w).unwrap();
        assert!((loss - -LOG_CLAMP.ln()).abs() < 1e-9);
        let all_void = LabelMap::new(1, 2, 2, vec![IGNORE, IGNORE]).unwrap();
        assert_eq!(weighted_cross_entropy(&p, &all_void, &w).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_rejects_bad_class() {
        let y = LabelMap::new(1, 1, 7, vec![5]).unwrap();
        let p = pmap(1, 1, 2, vec![0.5, 0.5]);
        assert!(weighted_cross_entropy(&p, &y, &WeightMap::ones(1, 1)).is_err());
    }

    struct Fixed(ProbMap);

    impl Segmenter for Fixed {
        fn segment(&self, _: Head, _: &Image, view: &GeometricTransform) -> Result<ProbMap> {
            Ok(apply_geometric(view, &self.0))
        }
    }

    #[test]
    fn perfect_segmenter_recovers_truth() {
        let y = LabelMap::new(2, 3, 7, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let x = Image::filled(2, 3, [0; 3]).unwrap();
        let seg = Fixed(ProbMap::one_hot(&y));
        for t in GeometricTransform::all() {
            let out = generate_pseudo_label_pair(&seg, &x, &t, &PhotometricParams::IDENTITY, &FusionConfig::default())
                .unwrap();
            assert_eq!(out.labels, y);
            assert_eq!(out.fraction, 1.0);
        }
    }

    #[test]
    fn identity_view_equals_single_head() {
        let p = random_pmap(5, 3, 4, 7);
        let x = Image::filled(3, 4, [0; 3]).unwrap();
        let out = generate_pseudo_label_pair(
            &Fixed(p.clone()),
            &x,
            &GeometricTransform::IDENTITY,
            &PhotometricParams::IDENTITY,
            &FusionConfig::default(),
        )
        .unwrap();
        assert_eq!(out.labels, pseudo_label(&p));
    }

    struct WrongShape;

    impl Segmenter for WrongShape {
        fn segment(&self, _: Head, _: &Image, _: &GeometricTransform) -> Result<ProbMap> {
            ProbMap::new(1, 1, 2, vec![0.5, 0.5], true)
        }
    }

    #[test]
    fn segmenter_shape_mismatch() {
        let x = Image::filled(2, 2, [0; 3]).unwrap();
        let err = generate_pseudo_label_pair(
            &WrongShape,
            &x,
            &GeometricTransform::IDENTITY,
            &PhotometricParams::IDENTITY,
            &FusionConfig::default(),
        );
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }
}
