//! Synthetic aerial scenes and a simulated segmenter.
//!
//! Scenes are painted in three passes (large land-cover patches, then roads,
//! water and fields, then buildings), so smaller elements always lie on top
//! of larger ones. The mock segmenter emits probabilities peaked at a
//! (possibly corrupted) reference class.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::Serialize;

use crate::augment::{
    apply_geometric, apply_photometric, sample_geometric, GeometricTransform, PhotometricParams,
    PhotometricRanges,
};
use crate::error::{Error, Result};
use crate::fusion::{
    generate_pseudo_label_pair, weight_map, weighted_cross_entropy, FusionConfig, Head, Segmenter,
    WeightMap,
};
use crate::grid::{ensure_same_shape, Grid, Image, LabelMap, ProbMap, IGNORE};
use crate::himix::{blend, classmix, himix, MixConfig, MixMask, MixOutput};
use crate::metrics::{confusion, miou};
use crate::rng::{tags, RngState};

pub const NUM_CLASSES: u8 = 7;

pub mod class {
    pub const BACKGROUND: u8 = 0;
    pub const BUILDING: u8 = 1;
    pub const ROAD: u8 = 2;
    pub const WATER: u8 = 3;
    pub const BARREN: u8 = 4;
    pub const FOREST: u8 = 5;
    pub const AGRICULTURAL: u8 = 6;
}

pub const CLASS_NAMES: [&str; 7] = [
    "background",
    "building",
    "road",
    "water",
    "barren",
    "forest",
    "agricultural",
];

/// Display colors for colorized label maps.
pub const PALETTE: [[u8; 3]; 7] = [
    [255, 255, 255],
    [255, 0, 0],
    [255, 255, 0],
    [0, 0, 255],
    [159, 129, 183],
    [0, 255, 0],
    [255, 195, 128],
];

/// Flat rendering colors, roughly what each cover type looks like from above.
const RENDER_COLORS: [[u8; 3]; 7] = [
    [148, 146, 138],
    [196, 84, 72],
    [92, 92, 98],
    [42, 72, 138],
    [172, 152, 112],
    [44, 98, 52],
    [150, 168, 82],
];

const NOISE_AMPLITUDE: i16 = 12;

/// Element counts are per 64x64 area (per 64 px of side for roads).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// 0 = rural mixture, 1 = urban mixture.
    pub skew: f64,
    pub patch_density: f64,
    pub road_density: f64,
    pub water_density: f64,
    pub field_density: f64,
    pub building_density: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            skew: 0.5,
            patch_density: 3.0,
            road_density: 1.0,
            water_density: 0.5,
            field_density: 1.0,
            building_density: 10.0,
        }
    }
}

impl SceneConfig {
    pub fn rural() -> Self {
        Self {
            skew: 0.0,
            ..Self::default()
        }
    }

    pub fn urban() -> Self {
        Self {
            skew: 1.0,
            ..Self::default()
        }
    }

    /// Everything but the base cover switched off.
    pub fn empty(height: usize, width: usize, skew: f64) -> Self {
        Self {
            height,
            width,
            skew,
            patch_density: 0.0,
            road_density: 0.0,
            water_density: 0.0,
            field_density: 0.0,
            building_density: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidParameter(format!(
                "scene must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return Err(Error::InvalidParameter(format!("skew {} outside [0, 1]", self.skew)));
        }
        let densities = [
            self.patch_density,
            self.road_density,
            self.water_density,
            self.field_density,
            self.building_density,
        ];
        if densities.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "densities must be finite and non-negative: {densities:?}"
            )));
        }
        Ok(())
    }

    fn area_units(&self) -> f64 {
        (self.height * self.width) as f64 / 4096.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scene {
    pub image: Image,
    pub labels: LabelMap,
}

/// Painting pass that last wrote each pixel: 0 base cover, 1 patches,
/// 2 roads/water/fields, 3 buildings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaintedScene {
    pub scene: Scene,
    pub stage: Vec<u8>,
}

struct Canvas {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    stage: Vec<u8>,
}

impl Canvas {
    fn paint(&mut self, i: usize, class: u8, stage: u8) {
        self.labels[i] = class;
        self.stage[i] = stage;
    }

    fn rect(&mut self, top: i64, left: i64, h: i64, w: i64, class: u8, stage: u8) {
        let r0 = top.max(0) as usize;
        let c0 = left.max(0) as usize;
        let r1 = ((top + h).max(0) as usize).min(self.height);
        let c1 = ((left + w).max(0) as usize).min(self.width);
        for r in r0..r1 {
            for c in c0..c1 {
                self.paint(r * self.width + c, class, stage);
            }
        }
    }

    fn ellipse(&mut self, cy: f64, cx: f64, ry: f64, rx: f64, class: u8, stage: u8) {
        let r0 = (cy - ry).floor().max(0.0) as usize;
        let r1 = ((cy + ry).ceil().max(0.0) as usize).min(self.height);
        let c0 = (cx - rx).floor().max(0.0) as usize;
        let c1 = ((cx + rx).ceil().max(0.0) as usize).min(self.width);
        for r in r0..r1 {
            for c in c0..c1 {
                let dy = (r as f64 + 0.5 - cy) / ry;
                let dx = (c as f64 + 0.5 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 {
                    self.paint(r * self.width + c, class, stage);
                }
            }
        }
    }
}

fn count(density: f64, units: f64, scale: f64) -> usize {
    (density * units * scale).round() as usize
}

fn uniform(r: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        r.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Generates a scene and records which pass painted each pixel.
pub fn generate_scene_painted(cfg: &SceneConfig, rng: &RngState) -> Result<PaintedScene> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let (hf, wf) = (h as f64, w as f64);
    let units = cfg.area_units();
    let skew = cfg.skew;
    let base = if skew >= 0.5 {
        class::BACKGROUND
    } else {
        class::AGRICULTURAL
    };
    let mut canvas = Canvas {
        height: h,
        width: w,
        labels: vec![base; h * w],
        stage: vec![0; h * w],
    };

    // pass 1: large land-cover patches
    let mut r = rng.derive(tags::SCENE_PATCHES).rng();
    let cover = [class::BACKGROUND, class::BARREN, class::FOREST, class::AGRICULTURAL];
    let cover_weights = [
        0.1 + 2.0 * skew,
        0.6,
        0.4 + 0.8 * (1.0 - skew),
        0.2 + 0.8 * (1.0 - skew),
    ];
    let pick_cover = WeightedIndex::new(cover_weights).expect("weights are positive");
    for _ in 0..count(cfg.patch_density, units, 1.0) {
        let class = cover[pick_cover.sample(&mut r)];
        let ry = uniform(&mut r, hf / 10.0, hf / 4.0);
        let rx = uniform(&mut r, wf / 10.0, wf / 4.0);
        let cy = uniform(&mut r, 0.0, hf);
        let cx = uniform(&mut r, 0.0, wf);
        canvas.ellipse(cy, cx, ry, rx, class, 1);
    }

    // pass 2: fields, water, roads
    let mut r = rng.derive(tags::SCENE_FIELDS).rng();
    for _ in 0..count(cfg.field_density, units, 1.0 - 0.7 * skew) {
        let fh = uniform(&mut r, hf / 8.0, hf / 4.0) as i64;
        let fw = uniform(&mut r, wf / 8.0, wf / 4.0) as i64;
        let top = r.gen_range(0..h as i64);
        let left = r.gen_range(0..w as i64);
        canvas.rect(top, left, fh.max(2), fw.max(2), class::AGRICULTURAL, 2);
    }
    let mut r = rng.derive(tags::SCENE_WATER).rng();
    for _ in 0..count(cfg.water_density, units, 1.0) {
        let ry = uniform(&mut r, hf / 20.0, hf / 8.0);
        let rx = uniform(&mut r, wf / 20.0, wf / 8.0);
        let cy = uniform(&mut r, 0.0, hf);
        let cx = uniform(&mut r, 0.0, wf);
        canvas.ellipse(cy, cx, ry.max(1.5), rx.max(1.5), class::WATER, 2);
    }
    let mut r = rng.derive(tags::SCENE_ROADS).rng();
    let side_units = (hf + wf) / 128.0;
    for _ in 0..count(cfg.road_density, side_units, 0.5 + skew) {
        let width = r.gen_range(2..=3i64);
        if r.gen_bool(0.5) {
            let row = r.gen_range(0..h as i64);
            canvas.rect(row, 0, width, w as i64, class::ROAD, 2);
        } else {
            let col = r.gen_range(0..w as i64);
            canvas.rect(0, col, h as i64, width, class::ROAD, 2);
        }
    }

    // pass 3: buildings, drawn from their own stream so a denser config
    // extends the building list of a sparser one
    let mut r = rng.derive(tags::SCENE_BUILDINGS).rng();
    for _ in 0..count(cfg.building_density, units, 0.2 + 0.8 * skew) {
        let bh = r.gen_range(2..=5i64);
        let bw = r.gen_range(2..=5i64);
        let top = r.gen_range(0..h as i64);
        let left = r.gen_range(0..w as i64);
        canvas.rect(top, left, bh, bw, class::BUILDING, 3);
    }

    let labels = LabelMap::new(h, w, NUM_CLASSES, canvas.labels)?;
    let image = render(&labels, &rng.derive(tags::SCENE_IMAGE_NOISE))?;
    Ok(PaintedScene {
        scene: Scene { image, labels },
        stage: canvas.stage,
    })
}

pub fn generate_scene(cfg: &SceneConfig, rng: &RngState) -> Result<Scene> {
    generate_scene_painted(cfg, rng).map(|p| p.scene)
}

/// Flat class colors plus independent per-channel noise.
fn render(labels: &LabelMap, rng: &RngState) -> Result<Image> {
    let mut r = rng.rng();
    let mut data = Vec::with_capacity(labels.len_pixels() * 3);
    for &class in labels.data() {
        let base = RENDER_COLORS.get(class as usize).copied().unwrap_or([0, 0, 0]);
        for v in base {
            let n = r.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
            data.push((v as i16 + n).clamp(0, 255) as u8);
        }
    }
    Image::new(labels.height(), labels.width(), data)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MockSegmenterConfig {
    /// Probability that a pixel's peak class is redrawn from
    /// `confusion_bias` instead of the reference class.
    pub noise: f64,
    /// Relative weights of the redrawn class; uniform when empty.
    pub confusion_bias: Vec<f64>,
    /// Logit of the peak class. Higher means more confident outputs.
    pub sharpness: f64,
}

impl Default for MockSegmenterConfig {
    fn default() -> Self {
        Self {
            noise: 0.1,
            confusion_bias: Vec::new(),
            sharpness: 6.0,
        }
    }
}

impl MockSegmenterConfig {
    pub fn perfect() -> Self {
        Self {
            noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidParameter(format!("noise {} outside [0, 1]", self.noise)));
        }
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sharpness must be positive, got {}",
                self.sharpness
            )));
        }
        if !self.confusion_bias.is_empty() {
            let ok = self.confusion_bias.len() == num_classes
                && self.confusion_bias.iter().all(|w| w.is_finite() && *w >= 0.0)
                && self.confusion_bias.iter().any(|w| *w > 0.0);
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "confusion bias needs {num_classes} non-negative weights, got {:?}",
                    self.confusion_bias
                )));
            }
        }
        Ok(())
    }
}

/// Normalized probabilities peaked at the reference class, corrupted per
/// `cfg`. Zero noise gives exact one-hot vectors. Other logits stay below
/// 0.9 of the peak logit, so the argmax is always the peak class.
pub fn mock_segment(
    cfg: &MockSegmenterConfig,
    image: &Image,
    truth: &LabelMap,
    rng: &RngState,
) -> Result<ProbMap> {
    ensure_same_shape("mock segmenter image vs truth", image.shape(), truth.shape())?;
    let c = truth.num_classes() as usize;
    cfg.validate(c)?;
    if cfg.noise == 0.0 && truth.data().iter().all(|&v| v != IGNORE) {
        return Ok(ProbMap::one_hot(truth));
    }
    let redraw = if cfg.confusion_bias.is_empty() {
        WeightedIndex::new(vec![1.0; c])
    } else {
        WeightedIndex::new(&cfg.confusion_bias)
    }
    .map_err(|e| Error::InvalidParameter(format!("confusion bias: {e}")))?;

    let mut r = rng.rng();
    let mut data = Vec::with_capacity(truth.len_pixels() * c);
    let mut logits = vec![0.0f64; c];
    for &y in truth.data() {
        let peak = if y == IGNORE || (y as usize) >= c || r.gen_bool(cfg.noise) {
            redraw.sample(&mut r)
        } else {
            y as usize
        };
        if cfg.noise == 0.0 {
            data.extend((0..c).map(|k| (k == peak) as u8 as f32));
            continue;
        }
        for (k, l) in logits.iter_mut().enumerate() {
            *l = if k == peak {
                cfg.sharpness
            } else {
                0.9 * cfg.sharpness * cfg.noise * r.gen::<f64>()
            };
        }
        let max = cfg.sharpness;
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        data.extend(logits.iter().map(|l| ((l - max).exp() / sum) as f32));
    }
    ProbMap::new(truth.height(), truth.width(), c, data, true)
}

/// Twin-head stand-in: both heads see the same reference labels (aligned to
/// each request's view) but draw independent noise.
#[derive(Clone, Debug)]
pub struct MockSegmenter {
    pub config: MockSegmenterConfig,
    pub truth: LabelMap,
    pub rng: RngState,
}

impl Segmenter for MockSegmenter {
    fn segment(&self, head: Head, image: &Image, view: &GeometricTransform) -> Result<ProbMap> {
        let truth = apply_geometric(view, &self.truth);
        let tag = match head {
            Head::One => tags::HEAD_ONE,
            Head::Two => tags::HEAD_TWO,
        };
        mock_segment(&self.config, image, &truth, &self.rng.derive(tag))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MixStrategy {
    #[default]
    Himix,
    Classmix,
}

impl MixStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            MixStrategy::Himix => "himix",
            MixStrategy::Classmix => "classmix",
        }
    }
}

impl std::str::FromStr for MixStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "himix" => Ok(MixStrategy::Himix),
            "classmix" => Ok(MixStrategy::Classmix),
            other => Err(Error::InvalidParameter(format!(
                "strategy must be himix or classmix, got {other:?}"
            ))),
        }
    }
}

/// Knobs shared by every episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpisodeSettings {
    pub mix: MixConfig,
    pub fusion: FusionConfig,
    pub photometric: PhotometricRanges,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenePair {
    pub source: Scene,
    pub target: Scene,
}

impl ScenePair {
    pub fn generate(source: &SceneConfig, target: &SceneConfig, rng: &RngState) -> Result<Self> {
        Ok(Self {
            source: generate_scene(source, &rng.derive(tags::SOURCE_SCENE))?,
            target: generate_scene(target, &rng.derive(tags::TARGET_SCENE))?,
        })
    }
}

/// Outcome of one simulated training step. Non-scalar outputs are skipped
/// when serializing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeReport {
    pub strategy: MixStrategy,
    pub source_fraction: f64,
    /// Per class, share of all pixels pasted from the source with that class.
    pub class_shares: Vec<f64>,
    pub confidence_fraction: f64,
    pub pseudo_label_miou: f64,
    pub source_loss: f64,
    pub mixed_loss: f64,
    pub source_view: GeometricTransform,
    pub target_view: GeometricTransform,
    pub mixed_view: GeometricTransform,
    #[serde(skip)]
    pub pseudo_labels: LabelMap,
    #[serde(skip)]
    pub mixed: MixOutput,
    #[serde(skip)]
    pub weights: WeightMap,
}

/// Per class `c`, the share of all pixels with `mask = 1` and source class `c`.
pub fn class_shares(mask: &MixMask, source_labels: &LabelMap, num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for (&m, &y) in mask.data().iter().zip(source_labels.data()) {
        if m != 0 && (y as usize) < num_classes {
            counts[y as usize] += 1;
        }
    }
    let n = mask.len_pixels() as f64;
    counts.into_iter().map(|k| k as f64 / n).collect()
}

fn augment_view(image: &Image, t: &GeometricTransform, p: &PhotometricParams) -> Image {
    apply_photometric(p, &apply_geometric(t, image))
}

/// Runs the data flow of one twin-head training step without gradients:
/// source augmentation and loss, pseudo-labelling, mixing, weighting, and
/// the weighted loss on the mixed pair and its augmented view.
///
/// Predictions come from [`MockSegmenter`]s whose reference labels are the
/// true labels of each image (for the mixed image, the blend of the two true
/// label maps).
pub fn run_pipeline_episode(
    pair: &ScenePair,
    segmenter: &MockSegmenterConfig,
    strategy: MixStrategy,
    settings: &EpisodeSettings,
    rng: &RngState,
) -> Result<EpisodeReport> {
    let ScenePair { source, target } = pair;
    let c = NUM_CLASSES.max(source.labels.num_classes()) as usize;
    let fusion = FusionConfig::new(settings.fusion.tau)?;
    settings.photometric.validate()?;

    // source batch: plain pair and its augmented twin, one per head
    let aug = rng.derive(tags::SOURCE_AUGMENT);
    let source_view = sample_geometric(&aug);
    let source_jitter = PhotometricParams::sample(&settings.photometric, &aug.derive(1));
    let x_s_aug = augment_view(&source.image, &source_view, &source_jitter);
    let y_s_aug = apply_geometric(&source_view, &source.labels);
    let source_model = MockSegmenter {
        config: segmenter.clone(),
        truth: source.labels.clone(),
        rng: rng.derive(tags::SOURCE_PREDICTION),
    };
    let p_plain = source_model.segment(Head::One, &source.image, &GeometricTransform::IDENTITY)?;
    let p_aug = source_model.segment(Head::Two, &x_s_aug, &source_view)?;
    let (h, w) = source.labels.shape();
    let (ah, aw) = y_s_aug.shape();
    let source_loss = 0.5
        * (weighted_cross_entropy(&p_plain, &source.labels, &WeightMap::ones(h, w))?
            + weighted_cross_entropy(&p_aug, &y_s_aug, &WeightMap::ones(ah, aw))?);

    // pseudo-labels on the target from both heads
    let aug = rng.derive(tags::TARGET_AUGMENT);
    let target_view = sample_geometric(&aug);
    let target_jitter = PhotometricParams::sample(&settings.photometric, &aug.derive(1));
    let target_model = MockSegmenter {
        config: segmenter.clone(),
        truth: target.labels.clone(),
        rng: rng.derive(tags::TARGET_AUGMENT).derive(2),
    };
    let pseudo = generate_pseudo_label_pair(&target_model, &target.image, &target_view, &target_jitter, &fusion)?;
    let pseudo_label_miou = miou(&confusion(&pseudo.labels, &target.labels)?)
        .map(|m| m.mean)
        .unwrap_or(0.0);

    // mixing
    let selection = rng.derive(tags::SELECTION);
    let mixed = match strategy {
        MixStrategy::Himix => himix(
            &source.image,
            &source.labels,
            &target.image,
            &pseudo.labels,
            &settings.mix,
            &selection,
        )?,
        MixStrategy::Classmix => classmix(
            &source.image,
            &source.labels,
            &target.image,
            &pseudo.labels,
            &selection,
        )?,
    };
    let weights = weight_map(&mixed.mask, pseudo.fraction)?;

    // mixed batch and its weighted loss
    let aug = rng.derive(tags::MIXED_AUGMENT);
    let mixed_view = sample_geometric(&aug);
    let mixed_jitter = PhotometricParams::sample(&settings.photometric, &aug.derive(1));
    let (_, true_mixed) = blend(
        &source.image,
        &target.image,
        &source.labels,
        &target.labels,
        &mixed.mask,
    )?;
    let mixed_model = MockSegmenter {
        config: segmenter.clone(),
        truth: true_mixed,
        rng: rng.derive(tags::MIXED_PREDICTION),
    };
    let x_m_aug = augment_view(&mixed.image, &mixed_view, &mixed_jitter);
    let y_m_aug = apply_geometric(&mixed_view, &mixed.labels);
    let w_m_aug = apply_geometric(&mixed_view, &weights);
    let q_plain = mixed_model.segment(Head::One, &mixed.image, &GeometricTransform::IDENTITY)?;
    let q_aug = mixed_model.segment(Head::Two, &x_m_aug, &mixed_view)?;
    let mixed_loss = 0.5
        * (weighted_cross_entropy(&q_plain, &mixed.labels, &weights)?
            + weighted_cross_entropy(&q_aug, &y_m_aug, &w_m_aug)?);

    Ok(EpisodeReport {
        strategy,
        source_fraction: mixed.mask.source_fraction(),
        class_shares: class_shares(&mixed.mask, &source.labels, c),
        confidence_fraction: pseudo.fraction,
        pseudo_label_miou,
        source_loss,
        mixed_loss,
        source_view,
        target_view,
        mixed_view,
        pseudo_labels: pseudo.labels,
        mixed,
        weights,
    })
}
