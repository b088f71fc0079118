//! Dense row-major grids: RGB images, class label maps and per-pixel
//! class probability maps.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Label value excluded from losses, metrics and instance extraction.
pub const IGNORE: u8 = 255;

/// Tolerance on per-pixel probability sums of normalized maps.
pub const NORMALIZATION_TOLERANCE: f32 = 1e-5;

const PMAP_MAGIC: &[u8; 4] = b"PMAP";

/// Common shape access for every dense grid type.
///
/// `channels` is the number of consecutive elements stored per pixel, so the
/// element slice always has `height * width * channels` entries.
pub trait Grid: Sized {
    type Elem: Copy;

    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn channels(&self) -> usize;
    fn elems(&self) -> &[Self::Elem];

    /// Builds a grid carrying the same metadata as `self` (class count,
    /// normalization flag) over new dimensions and elements.
    fn rebuild(&self, height: usize, width: usize, elems: Vec<Self::Elem>) -> Self;

    /// Returns the first violated invariant, if any.
    fn validate(&self) -> Result<()>;

    fn shape(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    fn len_pixels(&self) -> usize {
        self.height() * self.width()
    }
}

fn check_dims(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidDimensions(format!(
            "{height}x{width}: height and width must be at least 1"
        )));
    }
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::InvalidDimensions(format!("{height}x{width}x{channels} overflows")))?;
    if expected != len {
        return Err(Error::ShapeMismatch(format!(
            "{height}x{width}x{channels} grid needs {expected} elements, got {len}"
        )));
    }
    Ok(())
}

pub(crate) fn ensure_same_shape(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width, 3, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let n = height.saturating_mul(width);
        let data = rgb.iter().copied().cycle().take(n * 3).collect();
        Self::new(height, width, data)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

impl Grid for Image {
    type Elem = u8;

    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn channels(&self) -> usize {
        3
    }

    fn elems(&self) -> &[u8] {
        &self.data
    }

    fn rebuild(&self, height: usize, width: usize, elems: Vec<u8>) -> Self {
        Self {
            height,
            width,
            data: elems,
        }
    }

    fn validate(&self) -> Result<()> {
        check_dims(self.height, self.width, 3, self.data.len())
    }
}

/// Per-pixel class indices with [`IGNORE`] as the reserved void value.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: u8,
    data: Vec<u8>,
}

impl LabelMap {
    /// Only the shape is checked here; class ranges are checked by
    /// [`Grid::validate`].
    pub fn new(height: usize, width: usize, num_classes: u8, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width, 1, data.len())?;
        if num_classes == 0 || num_classes == IGNORE {
            return Err(Error::InvalidParameter(format!(
                "num_classes must be in 1..=254, got {num_classes}"
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, num_classes: u8, class: u8) -> Result<Self> {
        Self::new(height, width, num_classes, vec![class; height.saturating_mul(width)])
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Pixel count per class over non-ignore pixels. Classes that do not
    /// occur are absent from the map.
    pub fn class_pixel_counts(&self) -> BTreeMap<u8, usize> {
        let mut tally = [0usize; 256];
        for &v in &self.data {
            tally[v as usize] += 1;
        }
        tally
            .iter()
            .enumerate()
            .filter(|&(class, &n)| class != IGNORE as usize && n > 0)
            .map(|(class, &n)| (class as u8, n))
            .collect()
    }

    /// Classes present (non-ignore), ascending.
    pub fn present_classes(&self) -> Vec<u8> {
        self.class_pixel_counts().into_keys().collect()
    }
}

impl Grid for LabelMap {
    type Elem = u8;

    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn channels(&self) -> usize {
        1
    }

    fn elems(&self) -> &[u8] {
        &self.data
    }

    fn rebuild(&self, height: usize, width: usize, elems: Vec<u8>) -> Self {
        Self {
            height,
            width,
            num_classes: self.num_classes,
            data: elems,
        }
    }

    fn validate(&self) -> Result<()> {
        check_dims(self.height, self.width, 1, self.data.len())?;
        if let Some(i) = self
            .data
            .iter()
            .position(|&v| v != IGNORE && v >= self.num_classes)
        {
            return Err(Error::ClassOutOfRange {
                value: self.data[i],
                num_classes: self.num_classes,
                row: i / self.width,
                col: i % self.width,
            });
        }
        Ok(())
    }
}

/// Per-pixel class probability vectors, class index fastest.
///
/// `normalized` records whether each pixel's vector is expected to sum to
/// one. Fused twin-head maps keep per-class maxima and are not normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    num_classes: usize,
    normalized: bool,
    data: Vec<f32>,
}

impl ProbMap {
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        data: Vec<f32>,
        normalized: bool,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidDimensions("num_classes must be at least 1".into()));
        }
        check_dims(height, width, num_classes, data.len())?;
        Ok(Self {
            height,
            width,
            num_classes,
            normalized,
            data,
        })
    }

    /// One-hot probabilities for every non-ignore pixel of `labels`. Ignore
    /// pixels receive a uniform vector.
    pub fn one_hot(labels: &LabelMap) -> Self {
        let c = labels.num_classes() as usize;
        let mut data = vec![0.0f32; labels.len_pixels() * c];
        for (px, &v) in data.chunks_exact_mut(c).zip(labels.data()) {
            if v == IGNORE || v as usize >= c {
                px.fill(1.0 / c as f32);
            } else {
                px[v as usize] = 1.0;
            }
        }
        Self {
            height: labels.height(),
            width: labels.width(),
            num_classes: c,
            normalized: true,
            data,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn with_normalized(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.num_classes..(index + 1) * self.num_classes]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.num_classes)
    }

    /// Serializes to the PMAP layout: `"PMAP"`, then `H`, `W`, `C` as
    /// little-endian `u32`, then `H*W*C` little-endian `f32` values.
    pub fn to_pmap_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(PMAP_MAGIC);
        for dim in [self.height, self.width, self.num_classes] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the PMAP layout. The result is flagged not normalized; callers
    /// that know better can use [`ProbMap::with_normalized`].
    pub fn from_pmap_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != PMAP_MAGIC {
            return Err(Error::Format {
                expected: "PMAP header".into(),
                found: format!("{} bytes without magic", bytes.len()),
            });
        }
        let dim = |i: usize| {
            let raw: [u8; 4] = bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap();
            u32::from_le_bytes(raw) as usize
        };
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let count = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(c))
            .ok_or_else(|| Error::InvalidDimensions(format!("{h}x{w}x{c} overflows")))?;
        let body = &bytes[16..];
        if body.len() != count * 4 {
            return Err(Error::Format {
                expected: format!("{} payload bytes for {h}x{w}x{c}", count * 4),
                found: format!("{} bytes", body.len()),
            });
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(h, w, c, data, false)
    }
}

impl Grid for ProbMap {
    type Elem = f32;

    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn channels(&self) -> usize {
        self.num_classes
    }

    fn elems(&self) -> &[f32] {
        &self.data
    }

    fn rebuild(&self, height: usize, width: usize, elems: Vec<f32>) -> Self {
        Self {
            height,
            width,
            num_classes: self.num_classes,
            normalized: self.normalized,
            data: elems,
        }
    }

    fn validate(&self) -> Result<()> {
        check_dims(self.height, self.width, self.num_classes, self.data.len())?;
        for (i, px) in self.pixels().enumerate() {
            let (row, col) = (i / self.width, i % self.width);
            if let Some(class) = px.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::ProbabilityOutOfRange {
                    value: px[class],
                    row,
                    col,
                    class,
                });
            }
            if self.normalized {
                let sum: f32 = px.iter().sum();
                if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                    return Err(Error::NotNormalized { sum, row, col });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_label_map() {
        let y = LabelMap::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        assert!(y.validate().is_ok());
    }

    #[test]
    fn label_out_of_range() {
        let y = LabelMap::new(2, 2, 7, vec![0, 7, 1, 0]).unwrap();
        let err = y.validate().unwrap_err();
        assert!(matches!(err, Error::ClassOutOfRange { value: 7, row: 0, col: 1, .. }));
        assert!(err.to_string().contains("class index out of range"));
    }

    #[test]
    fn ignore_value_is_not_out_of_range() {
        let y = LabelMap::new(1, 2, 2, vec![IGNORE, 1]).unwrap();
        assert!(y.validate().is_ok());
    }

    #[test]
    fn unnormalized_pixel_rejected() {
        let p = ProbMap::new(1, 1, 2, vec![0.6, 0.5], true).unwrap();
        let err = p.validate().unwrap_err();
        assert!(err.to_string().starts_with("row sum 1.1"), "{err}");
        assert!(err.to_string().contains("exceeds tolerance"));
        // the same values are acceptable on an unnormalized (fused) map
        assert!(p.with_normalized(false).validate().is_ok());
    }

    #[test]
    fn probability_range_checked() {
        let p = ProbMap::new(1, 1, 2, vec![1.2, -0.2], false).unwrap();
        assert!(matches!(p.validate(), Err(Error::ProbabilityOutOfRange { .. })));
    }

    #[test]
    fn shape_mismatch_on_construction() {
        assert!(matches!(Image::new(2, 2, vec![0; 11]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(LabelMap::new(0, 2, 2, vec![]), Err(Error::InvalidDimensions(_))));
    }

    #[test]
    fn validate_is_idempotent() {
        let y = LabelMap::new(2, 2, 3, vec![0, 1, 2, 3]).unwrap();
        let a = y.validate().unwrap_err().to_string();
        let b = y.validate().unwrap_err().to_string();
        assert_eq!(a, b);
    }

    #[test]
    fn counts_uniform() {
        let y = LabelMap::filled(4, 4, 7, 0).unwrap();
        assert_eq!(y.class_pixel_counts(), BTreeMap::from([(0, 16)]));
    }

    #[test]
    fn counts_half_split() {
        let mut data = vec![0u8; 8];
        data.extend([1u8; 8]);
        let y = LabelMap::new(4, 4, 2, data).unwrap();
        assert_eq!(y.class_pixel_counts(), BTreeMap::from([(0, 8), (1, 8)]));
    }

    #[test]
    fn counts_match_tally_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<u8> = (0..256)
            .map(|_| if rng.gen_bool(0.1) { IGNORE } else { rng.gen_range(0..5) })
            .collect();
        let y = LabelMap::new(16, 16, 5, data.clone()).unwrap();

        let mut oracle: BTreeMap<u8, usize> = BTreeMap::new();
        for v in data.iter().filter(|&&v| v != IGNORE) {
            *oracle.entry(*v).or_default() += 1;
        }
        let counts = y.class_pixel_counts();
        assert_eq!(counts, oracle);
        let non_ignore = data.iter().filter(|&&v| v != IGNORE).count();
        assert_eq!(counts.values().sum::<usize>(), non_ignore);
    }

    #[test]
    fn pmap_layout_is_bit_exact() {
        let p = ProbMap::new(1, 2, 2, vec![0.25, 0.75, 1.0, 0.0], true).unwrap();
        let bytes = p.to_pmap_bytes();
        assert_eq!(&bytes[..4], b"PMAP");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &0.25f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 16);
        let back = ProbMap::from_pmap_bytes(&bytes).unwrap();
        assert_eq!(back.data(), p.data());
        assert!(!back.is_normalized());
    }

    #[test]
    fn pmap_truncated_rejected() {
        let p = ProbMap::new(1, 1, 2, vec![0.5, 0.5], true).unwrap();
        let bytes = p.to_pmap_bytes();
        assert!(ProbMap::from_pmap_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ProbMap::from_pmap_bytes(b"PMA").is_err());
    }
}
