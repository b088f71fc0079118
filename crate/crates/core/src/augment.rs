//! Geometric and photometric augmentation.
//!
//! Geometric transforms are pixel permutations (flips and quarter turns) and
//! are exactly invertible on every grid type. Photometric jitter touches RGB
//! images only.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, LabelMap};
use crate::rng::RngState;

/// Horizontal flip, then vertical flip, then `rot90` counter-clockwise
/// quarter turns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct GeometricTransform {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: u8,
}

impl GeometricTransform {
    pub const IDENTITY: Self = Self {
        hflip: false,
        vflip: false,
        rot90: 0,
    };

    pub fn new(hflip: bool, vflip: bool, rot90: u8) -> Self {
        Self {
            hflip,
            vflip,
            rot90: rot90 % 4,
        }
    }

    /// All 16 distinct parameter combinations.
    pub fn all() -> impl Iterator<Item = Self> {
        (0..16u8).map(|bits| Self::new(bits & 1 != 0, bits & 2 != 0, bits >> 2))
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Output (height, width) for an input of the given shape.
    pub fn output_shape(&self, height: usize, width: usize) -> (usize, usize) {
        if self.rot90 % 2 == 1 {
            (width, height)
        } else {
            (height, width)
        }
    }

    /// The transform that undoes `self`, expressed in the same
    /// flip-flip-rotate order.
    ///
    /// Flips conjugate a rotation into its reverse, so with an odd number of
    /// flips the rotation already undoes itself once the flips are reapplied.
    pub fn inverse(&self) -> Self {
        let k = self.rot90 % 4;
        let rot90 = if self.hflip != self.vflip { k } else { (4 - k) % 4 };
        Self::new(self.hflip, self.vflip, rot90)
    }

    /// Row-major source index for output pixel `(row, col)` given the input
    /// shape.
    #[inline]
    fn source_index(&self, in_h: usize, in_w: usize, row: usize, col: usize) -> usize {
        // undo the rotation into flipped-input coordinates
        let (mut r, mut c) = match self.rot90 % 4 {
            0 => (row, col),
            1 => (col, in_w - 1 - row),
            2 => (in_h - 1 - row, in_w - 1 - col),
            _ => (in_h - 1 - col, row),
        };
        if self.vflip {
            r = in_h - 1 - r;
        }
        if self.hflip {
            c = in_w - 1 - c;
        }
        r * in_w + c
    }

    pub fn apply<G: Grid>(&self, grid: &G) -> G {
        apply_geometric(self, grid)
    }
}

/// Permutes the pixels of any grid. Per-pixel element vectors move intact.
pub fn apply_geometric<G: Grid>(t: &GeometricTransform, grid: &G) -> G {
    let (h, w) = grid.shape();
    let ch = grid.channels();
    let src = grid.elems();
    if t.is_identity() {
        return grid.rebuild(h, w, src.to_vec());
    }
    let (oh, ow) = t.output_shape(h, w);
    let mut out = Vec::with_capacity(src.len());
    for row in 0..oh {
        for col in 0..ow {
            let s = t.source_index(h, w, row, col) * ch;
            out.extend_from_slice(&src[s..s + ch]);
        }
    }
    grid.rebuild(oh, ow, out)
}

pub fn invert_geometric(t: &GeometricTransform) -> GeometricTransform {
    t.inverse()
}

/// Each flip with probability 0.5; with probability 0.5 a rotation by a
/// uniformly drawn quarter-turn count, else none.
pub fn sample_geometric(rng: &RngState) -> GeometricTransform {
    let mut r = rng.rng();
    let hflip = r.gen_bool(0.5);
    let vflip = r.gen_bool(0.5);
    let rotate = r.gen_bool(0.5);
    let k = r.gen_range(0..4u32) as u8;
    GeometricTransform::new(hflip, vflip, if rotate { k } else { 0 })
}

/// Magnitudes for color jitter sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhotometricRanges {
    /// Brightness delta drawn from `[-brightness, brightness]`, fraction of 255.
    pub brightness: f32,
    /// Contrast factor drawn from `[1 - contrast, 1 + contrast]`.
    pub contrast: f32,
    /// Saturation factor drawn from `[1 - saturation, 1 + saturation]`.
    pub saturation: f32,
    /// Hue shift in degrees drawn from `[-hue, hue]`.
    pub hue: f32,
}

impl Default for PhotometricRanges {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 10.0,
        }
    }
}

impl PhotometricRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.brightness)
            && (0.0..1.0).contains(&self.contrast)
            && (0.0..1.0).contains(&self.saturation)
            && (0.0..=180.0).contains(&self.hue);
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "photometric ranges out of bounds: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One draw of color jitter. `Default` is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhotometricParams {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue_degrees: f32,
}

impl Default for PhotometricParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PhotometricParams {
    pub const IDENTITY: Self = Self {
        brightness: 0.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_degrees: 0.0,
    };

    pub fn sample(ranges: &PhotometricRanges, rng: &RngState) -> Self {
        let mut r = rng.rng();
        let mut sym = |m: f32| if m > 0.0 { r.gen_range(-m..=m) } else { 0.0 };
        Self {
            brightness: sym(ranges.brightness),
            contrast: 1.0 + sym(ranges.contrast),
            saturation: 1.0 + sym(ranges.saturation),
            hue_degrees: sym(ranges.hue),
        }
    }
}

fn clamp_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    [hue, sat, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Brightness, then contrast, then saturation and hue. Stages whose
/// parameter is the identity are skipped, so identity params reproduce the
/// input bit for bit.
pub fn apply_photometric(params: &PhotometricParams, image: &Image) -> Image {
    let mut data = image.data().to_vec();
    if params.brightness != 0.0 {
        let shift = 255.0 * params.brightness;
        for v in &mut data {
            *v = clamp_u8(*v as f32 + shift);
        }
    }
    if params.contrast != 1.0 {
        for v in &mut data {
            *v = clamp_u8((*v as f32 - 128.0) * params.contrast + 128.0);
        }
    }
    if params.saturation != 1.0 || params.hue_degrees != 0.0 {
        for px in data.chunks_exact_mut(3) {
            let rgb = [px[0] as f32 / 255.0, px[1] as f32 / 255.0, px[2] as f32 / 255.0];
            let [h, s, v] = rgb_to_hsv(rgb);
            let out = hsv_to_rgb([
                h + params.hue_degrees,
                (s * params.saturation).clamp(0.0, 1.0),
                v,
            ]);
            for (dst, c) in px.iter_mut().zip(out) {
                *dst = clamp_u8(c * 255.0);
            }
        }
    }
    image.rebuild(image.height(), image.width(), data)
}

pub const MIN_SCALE: f64 = 0.5;
pub const MAX_SCALE: f64 = 2.0;

fn scaled_shape(h: usize, w: usize, scale: f64) -> Result<(usize, usize)> {
    if !(MIN_SCALE..=MAX_SCALE).contains(&scale) {
        return Err(Error::InvalidParameter(format!(
            "scale {scale} outside [{MIN_SCALE}, {MAX_SCALE}]"
        )));
    }
    let oh = ((h as f64 * scale).round() as usize).max(1);
    let ow = ((w as f64 * scale).round() as usize).max(1);
    Ok((oh, ow))
}

pub fn sample_scale(rng: &RngState) -> f64 {
    rng.rng().gen_range(MIN_SCALE..=MAX_SCALE)
}

/// Nearest-neighbor resize for any grid; categorical grids must use this.
pub fn resize_nearest<G: Grid>(grid: &G, scale: f64) -> Result<G> {
    let (h, w) = grid.shape();
    let (oh, ow) = scaled_shape(h, w, scale)?;
    let ch = grid.channels();
    let src = grid.elems();
    let map = |dst: usize, n_in: usize, n_out: usize| {
        (((dst as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize).min(n_in - 1)
    };
    let cols: Vec<usize> = (0..ow).map(|c| map(c, w, ow)).collect();
    let mut out = Vec::with_capacity(oh * ow * ch);
    for row in 0..oh {
        let sr = map(row, h, oh);
        for &sc in &cols {
            let s = (sr * w + sc) * ch;
            out.extend_from_slice(&src[s..s + ch]);
        }
    }
    Ok(grid.rebuild(oh, ow, out))
}

pub fn resize_labels(labels: &LabelMap, scale: f64) -> Result<LabelMap> {
    resize_nearest(labels, scale)
}

/// Bilinear resize with half-pixel centers.
pub fn resize_image(image: &Image, scale: f64) -> Result<Image> {
    let (h, w) = image.shape();
    let (oh, ow) = scaled_shape(h, w, scale)?;
    let src = image.data();
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|d| {
                let pos = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5)
                    .clamp(0.0, (n_in - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let rows = taps(h, oh);
    let cols = taps(w, ow);
    let mut out = Vec::with_capacity(oh * ow * 3);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            for ch in 0..3 {
                let at = |r: usize, c: usize| src[(r * w + c) * 3 + ch] as f64;
                let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
                let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(image.rebuild(oh, ow, out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Exact sub-grid copy.
pub fn crop<G: Grid>(grid: &G, rect: Rect) -> Result<G> {
    let (h, w) = grid.shape();
    if rect.height == 0
        || rect.width == 0
        || rect.top + rect.height > h
        || rect.left + rect.width > w
    {
        return Err(Error::OutOfBounds(format!("{rect:?} outside {h}x{w} grid")));
    }
    let ch = grid.channels();
    let src = grid.elems();
    let mut out = Vec::with_capacity(rect.height * rect.width * ch);
    for row in rect.top..rect.top + rect.height {
        let s = (row * w + rect.left) * ch;
        out.extend_from_slice(&src[s..s + rect.width * ch]);
    }
    Ok(grid.rebuild(rect.height, rect.width, out))
}

/// Uniformly placed `height` x `width` window inside a grid of the given
/// shape, clipped to the grid when it is smaller.
pub fn sample_crop(rng: &RngState, grid_shape: (usize, usize), height: usize, width: usize) -> Rect {
    let (h, w) = grid_shape;
    let (ch, cw) = (height.min(h).max(1), width.min(w).max(1));
    let mut r = rng.rng();
    Rect {
        top: r.gen_range(0..=(h - ch) as u64) as usize,
        left: r.gen_range(0..=(w - cw) as u64) as usize,
        height: ch,
        width: cw,
    }
}
