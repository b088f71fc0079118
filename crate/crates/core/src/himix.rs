//! Hierarchical instance mixing and the class-mixing baseline.
//!
//! Source instances are sampled, stacked together with every target instance
//! so that bigger instances sit lower, and the stack is flattened from the
//! top: each pixel takes the domain of the smallest instance covering it.

use std::cmp::Reverse;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, Grid, Image, LabelMap};
use crate::instances::{extract_instances, relabel_disjoint, Connectivity, Domain, InstanceMap};
use crate::rng::{sample_without_replacement, RngState};

/// Binary per-pixel mixing mask, 1 = take the source pixel.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct MixMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MixMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        let mask = Self {
            height,
            width,
            data,
        };
        mask.validate()?;
        Ok(mask)
    }

    pub fn filled(height: usize, width: usize, source: bool) -> Result<Self> {
        Self::new(height, width, vec![source as u8; height * width])
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_source(&self, index: usize) -> bool {
        self.data[index] != 0
    }

    pub fn source_pixels(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }

    /// Share of pixels taken from the source image.
    pub fn source_fraction(&self) -> f64 {
        self.source_pixels() as f64 / self.data.len() as f64
    }
}

impl Grid for MixMask {
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
            data: elems,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.data.len() != self.height * self.width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} mask with {} entries",
                self.height,
                self.width,
                self.data.len()
            )));
        }
        if let Some(i) = self.data.iter().position(|&b| b > 1) {
            return Err(Error::InvalidParameter(format!(
                "mask value {} at pixel {i} is not binary",
                self.data[i]
            )));
        }
        Ok(())
    }
}

/// One instance's one-hot plane, stored as the sorted row-major indices of
/// its set pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub instance_id: u32,
    pub domain: Domain,
    pixels: Vec<u32>,
}

impl Layer {
    pub fn new(instance_id: u32, domain: Domain, mut pixels: Vec<u32>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Self {
            instance_id,
            domain,
            pixels,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn covers(&self, index: u32) -> bool {
        self.pixels.binary_search(&index).is_ok()
    }

    /// Precedence key: the layer with the smallest key is the topmost.
    /// Smaller instances sit higher; equal sizes put source above target,
    /// then lower ids above higher ones.
    pub fn precedence(&self) -> (usize, Domain, u32) {
        (self.pixel_count(), self.domain, self.instance_id)
    }
}

/// Layers ordered bottom (index 0, largest) to top (smallest).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerStack {
    height: usize,
    width: usize,
    layers: Vec<Layer>,
}

impl LayerStack {
    /// Sorts `layers` into stacking order. Pixel indices must lie inside the
    /// `height` x `width` grid.
    pub fn new(height: usize, width: usize, mut layers: Vec<Layer>) -> Result<Self> {
        let n = (height * width) as u64;
        if let Some(bad) = layers
            .iter()
            .find(|l| l.pixels.last().is_some_and(|&p| p as u64 >= n))
        {
            return Err(Error::ShapeMismatch(format!(
                "layer {} has pixels outside the {height}x{width} grid",
                bad.instance_id
            )));
        }
        layers.sort_by_key(|l| Reverse(l.precedence()));
        Ok(Self {
            height,
            width,
            layers,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Index of the topmost covering layer for every pixel, found by painting
    /// layers bottom to top.
    pub fn winners(&self) -> Result<Vec<usize>> {
        let mut owner = vec![usize::MAX; self.height * self.width];
        for (z, layer) in self.layers.iter().enumerate() {
            for &p in &layer.pixels {
                owner[p as usize] = z;
            }
        }
        if let Some(i) = owner.iter().position(|&z| z == usize::MAX) {
            return Err(Error::IncompleteCoverage {
                row: i / self.width,
                col: i % self.width,
            });
        }
        Ok(owner)
    }
}

/// Groups pixel indices by instance slot in one counting pass.
fn bucket_pixels(map: &InstanceMap) -> Vec<Vec<u32>> {
    let mut buckets: Vec<Vec<u32>> = map
        .table()
        .iter()
        .map(|inst| Vec::with_capacity(inst.pixel_count))
        .collect();
    for (i, &id) in map.ids().iter().enumerate() {
        if let Some(slot) = map.slot(id) {
            buckets[slot].push(i as u32);
        }
    }
    buckets
}

/// Half of the source instances (rounded up), drawn uniformly without
/// replacement. Ids come back ascending.
pub fn select_source_instances(instances: &InstanceMap, rng: &RngState) -> Result<Vec<u32>> {
    select_instances(instances, 0.5, rng)
}

/// `ceil(ratio * |K|)` instances drawn uniformly without replacement.
pub fn select_instances(instances: &InstanceMap, ratio: f64, rng: &RngState) -> Result<Vec<u32>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "selection ratio must be in (0, 1], got {ratio}"
        )));
    }
    if instances.is_empty() {
        return Err(Error::NoSourceInstances);
    }
    let n = instances.len();
    let k = ((n as f64 * ratio).ceil() as usize).clamp(1, n);
    let picked = sample_without_replacement(&mut rng.rng(), n, k);
    Ok(picked.into_iter().map(|slot| instances.table()[slot].id).collect())
}

/// One layer per selected source instance plus one per target instance.
pub fn build_layer_stack(
    source: &InstanceMap,
    selected: &[u32],
    target: &InstanceMap,
) -> Result<LayerStack> {
    ensure_same_shape("source vs target instances", source.shape(), target.shape())?;
    let mut layers = Vec::with_capacity(selected.len() + target.len());

    if !selected.is_empty() {
        let mut buckets = bucket_pixels(source);
        for &id in selected {
            let slot = source.slot(id).ok_or_else(|| {
                Error::InvalidParameter(format!("selected id {id} is not a source instance"))
            })?;
            let pixels = std::mem::take(&mut buckets[slot]);
            layers.push(Layer {
                instance_id: id,
                domain: Domain::Source,
                pixels,
            });
        }
    }
    for (inst, pixels) in target.table().iter().zip(bucket_pixels(target)) {
        layers.push(Layer {
            instance_id: inst.id,
            domain: Domain::Target,
            pixels,
        });
    }
    let (h, w) = target.shape();
    LayerStack::new(h, w, layers)
}

/// Flattens the stack: a pixel is source iff its topmost covering layer is.
pub fn reduce_to_mask(stack: &LayerStack) -> Result<MixMask> {
    let winners = stack.winners()?;
    let data = winners
        .into_iter()
        .map(|z| (stack.layers[z].domain == Domain::Source) as u8)
        .collect();
    let (h, w) = stack.shape();
    MixMask::new(h, w, data)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixOutput {
    pub image: Image,
    pub labels: LabelMap,
    pub mask: MixMask,
}

/// Exact per-pixel selection between the two pairs.
pub fn blend(
    x_s: &Image,
    x_t: &Image,
    y_s: &LabelMap,
    y_t: &LabelMap,
    mask: &MixMask,
) -> Result<(Image, LabelMap)> {
    let shape = mask.shape();
    ensure_same_shape("source image vs mask", x_s.shape(), shape)?;
    ensure_same_shape("target image vs mask", x_t.shape(), shape)?;
    ensure_same_shape("source labels vs mask", y_s.shape(), shape)?;
    ensure_same_shape("target labels vs mask", y_t.shape(), shape)?;

    let mut image = Vec::with_capacity(x_s.data().len());
    for ((s, t), &m) in x_s
        .data()
        .chunks_exact(3)
        .zip(x_t.data().chunks_exact(3))
        .zip(mask.data())
    {
        image.extend_from_slice(if m != 0 { s } else { t });
    }
    let labels = y_s
        .data()
        .iter()
        .zip(y_t.data())
        .zip(mask.data())
        .map(|((&s, &t), &m)| if m != 0 { s } else { t })
        .collect();
    let num_classes = y_s.num_classes().max(y_t.num_classes());
    Ok((
        Image::new(shape.0, shape.1, image)?,
        LabelMap::new(shape.0, shape.1, num_classes, labels)?,
    ))
}

/// Mask covering `ceil(K/2)` of the `K` classes present in `y_s`, chosen
/// uniformly. A map with no labelled pixel yields an empty mask.
pub fn classmix_mask(y_s: &LabelMap, rng: &RngState) -> MixMask {
    let present = y_s.present_classes();
    let k = present.len().div_ceil(2);
    let mut chosen = [false; 256];
    for i in sample_without_replacement(&mut rng.rng(), present.len(), k) {
        chosen[present[i] as usize] = true;
    }
    let data = y_s.data().iter().map(|&v| chosen[v as usize] as u8).collect();
    MixMask {
        height: y_s.height(),
        width: y_s.width(),
        data,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixConfig {
    pub connectivity: Connectivity,
    /// Fraction of source instances pasted, rounded up.
    pub selection_ratio: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::Four,
            selection_ratio: 0.5,
        }
    }
}

/// Extracted and id-disjoint instance maps for a label pair.
pub fn instance_pair(
    y_s: &LabelMap,
    y_t: &LabelMap,
    connectivity: Connectivity,
) -> Result<(InstanceMap, InstanceMap)> {
    ensure_same_shape("source vs target labels", y_s.shape(), y_t.shape())?;
    let source = extract_instances(y_s, connectivity, Domain::Source);
    let target = extract_instances(y_t, connectivity, Domain::Target);
    Ok(relabel_disjoint(source, target))
}

/// Mixing mask for a label pair. `rng` drives the instance selection.
pub fn himix_mask(y_s: &LabelMap, y_t: &LabelMap, cfg: &MixConfig, rng: &RngState) -> Result<MixMask> {
    let (source, target) = instance_pair(y_s, y_t, cfg.connectivity)?;
    let selected = select_instances(&source, cfg.selection_ratio, rng)?;
    let stack = build_layer_stack(&source, &selected, &target)?;
    reduce_to_mask(&stack)
}

/// Full hierarchical mix of a source pair onto a target pair.
pub fn himix(
    x_s: &Image,
    y_s: &LabelMap,
    x_t: &Image,
    y_t: &LabelMap,
    cfg: &MixConfig,
    rng: &RngState,
) -> Result<MixOutput> {
    let mask = himix_mask(y_s, y_t, cfg, rng)?;
    let (image, labels) = blend(x_s, x_t, y_s, y_t, &mask)?;
    Ok(MixOutput {
        image,
        labels,
        mask,
    })
}

/// Baseline class mix with the same output layout as [`himix`].
pub fn classmix(
    x_s: &Image,
    y_s: &LabelMap,
    x_t: &Image,
    y_t: &LabelMap,
    rng: &RngState,
) -> Result<MixOutput> {
    let mask = classmix_mask(y_s, rng);
    let (image, labels) = blend(x_s, x_t, y_s, y_t, &mask)?;
    Ok(MixOutput {
        image,
        labels,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::IGNORE;

    const LAND: u8 = 4;
    const ROAD: u8 = 2;
    const CAR: u8 = 1;

    fn labels(h: usize, w: usize, data: &[u8]) -> LabelMap {
        LabelMap::new(h, w, 7, data.to_vec()).unwrap()
    }

    fn layer(id: u32, domain: Domain, pixels: &[u32]) -> Layer {
        Layer::new(id, domain, pixels.to_vec())
    }

    #[test]
    fn single_instance_is_always_selected() {
        let inst = extract_instances(&LabelMap::filled(3, 3, 7, 1).unwrap(), Connectivity::Four, Domain::Source);
        assert_eq!(select_source_instances(&inst, &RngState::new(3)).unwrap(), vec![1]);
    }

    #[test]
    fn half_of_four_is_two_and_repeatable() {
        let y = labels(2, 2, &[0, 1, 2, 3]);
        let inst = extract_instances(&y, Connectivity::Four, Domain::Source);
        let rng = RngState::new(17);
        let a = select_source_instances(&inst, &rng).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, select_source_instances(&inst, &rng).unwrap());
    }

    #[test]
    fn empty_source_is_an_error() {
        let inst = extract_instances(&LabelMap::filled(2, 2, 7, IGNORE).unwrap(), Connectivity::Four, Domain::Source);
        let err = select_source_instances(&inst, &RngState::new(1)).unwrap_err();
        assert_eq!(err.to_string(), "no source instances");
    }

    #[test]
    fn stack_sorted_by_count() {
        let stack = LayerStack::new(
            4,
            5,
            vec![
                layer(1, Domain::Source, &[0, 1, 2, 3]),
                layer(2, Domain::Target, &(0..10).collect::<Vec<_>>()),
                layer(3, Domain::Target, &(10..16).collect::<Vec<_>>()),
            ],
        )
        .unwrap();
        let order: Vec<u32> = stack.layers().iter().map(|l| l.instance_id).collect();
        assert_eq!(order, vec![2, 3, 1]);
    }

    #[test]
    fn equal_counts_put_source_on_top() {
        let all: Vec<u32> = (0..4).collect();
        let stack = LayerStack::new(
            2,
            2,
            vec![layer(2, Domain::Target, &all), layer(1, Domain::Source, &all)],
        )
        .unwrap();
        assert_eq!(stack.layers()[1].domain, Domain::Source);
        assert!(reduce_to_mask(&stack).unwrap().data().iter().all(|&b| b == 1));
    }

    #[test]
    fn no_selection_means_target_only() {
        let y_s = labels(2, 2, &[0, 0, 1, 1]);
        let y_t = labels(2, 2, &[2, 3, 3, 3]);
        let (s, t) = instance_pair(&y_s, &y_t, Connectivity::Four).unwrap();
        let stack = build_layer_stack(&s, &[], &t).unwrap();
        assert_eq!(stack.len(), 2);
        assert!(stack.layers().iter().all(|l| l.domain == Domain::Target));
        assert_eq!(reduce_to_mask(&stack).unwrap().source_pixels(), 0);
    }

    #[test]
    fn unknown_selected_id_rejected() {
        let y = labels(2, 2, &[0, 0, 1, 1]);
        let (s, t) = instance_pair(&y, &y, Connectivity::Four).unwrap();
        assert!(build_layer_stack(&s, &[3], &t).is_err());
    }

    #[test]
    fn all_target_layer_gives_zero_mask() {
        let stack = LayerStack::new(2, 3, vec![layer(1, Domain::Target, &[0, 1, 2, 3, 4, 5])]).unwrap();
        assert_eq!(reduce_to_mask(&stack).unwrap(), MixMask::filled(2, 3, false).unwrap());
    }

    #[test]
    fn uncovered_pixel_is_an_error() {
        let stack = LayerStack::new(2, 2, vec![layer(1, Domain::Target, &[0, 1, 2])]).unwrap();
        assert!(matches!(
            reduce_to_mask(&stack),
            Err(Error::IncompleteCoverage { row: 1, col: 1 })
        ));
    }

    #[test]
    fn small_source_instance_on_top_of_target() {
        // source 'B' is a 2x2 block in a 5x4 map; target has a 10 px and a 6 px region
        let mut ys = vec![LAND; 20];
        for i in [5, 6, 9, 10] {
            ys[i] = ROAD;
        }
        let mut yt = vec![0u8; 20];
        yt[10..16].fill(3);
        yt[16..20].fill(5);
        let (s, t) = instance_pair(&labels(5, 4, &ys), &labels(5, 4, &yt), Connectivity::Four).unwrap();
        let road = s.table().iter().find(|i| i.class == ROAD).unwrap().id;
        let stack = build_layer_stack(&s, &[road], &t).unwrap();
        let mask = reduce_to_mask(&stack).unwrap();
        let set: Vec<usize> = (0..20).filter(|&i| mask.is_source(i)).collect();
        assert_eq!(set, vec![5, 6, 9, 10]);
    }

    #[test]
    fn cars_on_road_on_land() {
        // 4x5 source: a 6 px road with a 2 px car beside it; target is one 20 px instance
        #[rustfmt::skip]
        let ys = [
            LAND, LAND, LAND, LAND, LAND,
            ROAD, ROAD, ROAD, ROAD, ROAD,
            LAND, CAR,  CAR,  LAND, ROAD,
            LAND, LAND, LAND, LAND, LAND,
        ];
        let y_s = labels(4, 5, &ys);
        let y_t = LabelMap::filled(4, 5, 7, 0).unwrap();
        let (s, t) = instance_pair(&y_s, &y_t, Connectivity::Four).unwrap();
        let road = s.table().iter().find(|i| i.class == ROAD).unwrap();
        let car = s.table().iter().find(|i| i.class == CAR).unwrap();
        assert_eq!((road.pixel_count, car.pixel_count), (6, 2));

        let stack = build_layer_stack(&s, &[road.id, car.id], &t).unwrap();
        let winners = stack.winners().unwrap();
        let mask = reduce_to_mask(&stack).unwrap();
        assert_eq!(mask.source_pixels(), 8);
        for i in 0..20 {
            let expect_source = ys[i] == ROAD || ys[i] == CAR;
            assert_eq!(mask.is_source(i), expect_source, "pixel {i}");
            if ys[i] == CAR {
                assert_eq!(stack.layers()[winners[i]].instance_id, car.id);
            }
        }
    }

    #[test]
    fn blend_identities_and_checkerboard() {
        let xs = Image::filled(2, 2, [200, 10, 10]).unwrap();
        let xt = Image::filled(2, 2, [5, 5, 90]).unwrap();
        let ys = LabelMap::filled(2, 2, 7, 1).unwrap();
        let yt = LabelMap::filled(2, 2, 7, 3).unwrap();

        let ones = MixMask::filled(2, 2, true).unwrap();
        assert_eq!(blend(&xs, &xt, &ys, &yt, &ones).unwrap(), (xs.clone(), ys.clone()));
        let zeros = MixMask::filled(2, 2, false).unwrap();
        assert_eq!(blend(&xs, &xt, &ys, &yt, &zeros).unwrap(), (xt.clone(), yt.clone()));

        let checker = MixMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let (xm, ym) = blend(&xs, &xt, &ys, &yt, &checker).unwrap();
        for i in 0..4 {
            let (r, c) = (i / 2, i % 2);
            let src = (r + c) % 2 == 0;
            assert_eq!(xm.pixel(r, c), if src { xs.pixel(r, c) } else { xt.pixel(r, c) });
            assert_eq!(ym.get(r, c), if src { 1 } else { 3 });
        }
    }

    #[test]
    fn blend_shape_mismatch() {
        let xs = Image::filled(2, 2, [0; 3]).unwrap();
        let xt = Image::filled(2, 3, [0; 3]).unwrap();
        let y = LabelMap::filled(2, 2, 7, 0).unwrap();
        let m = MixMask::filled(2, 2, true).unwrap();
        assert!(matches!(blend(&xs, &xt, &y, &y, &m), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn classmix_single_class_covers_everything() {
        let y = LabelMap::filled(3, 3, 7, 4).unwrap();
        assert_eq!(classmix_mask(&y, &RngState::new(0)).source_pixels(), 9);
    }

    #[test]
    fn classmix_two_classes_picks_one() {
        let mut data = vec![0u8; 8];
        data.extend([5u8; 8]);
        let y = LabelMap::new(4, 4, 7, data).unwrap();
        for seed in 0..10 {
            let mask = classmix_mask(&y, &RngState::new(seed));
            assert_eq!(mask.source_pixels(), 8);
            // set bits are exactly one class
            let classes: std::collections::BTreeSet<u8> =
                (0..16).filter(|&i| mask.is_source(i)).map(|i| y.data()[i]).collect();
            assert_eq!(classes.len(), 1);
        }
    }

    #[test]
    fn classmix_skips_ignore() {
        let y = labels(1, 3, &[IGNORE, 2, 2]);
        assert_eq!(classmix_mask(&y, &RngState::new(0)).data(), &[0, 1, 1]);
    }

    #[test]
    fn identical_domains_keep_labels() {
        let y = labels(3, 3, &[0, 0, 1, 2, 2, 1, 2, 3, 3]);
        let x = Image::filled(3, 3, [1, 2, 3]).unwrap();
        for seed in 0..5 {
            let out = himix(&x, &y, &x, &y, &MixConfig::default(), &RngState::new(seed)).unwrap();
            assert_eq!(out.labels, y);
            assert_eq!(out.image, x);
        }
    }

    #[test]
    fn full_source_instance_wins_tie_with_full_target() {
        let y_s = LabelMap::filled(4, 4, 7, 6).unwrap();
        let y_t = LabelMap::filled(4, 4, 7, 0).unwrap();
        let xs = Image::filled(4, 4, [9, 9, 9]).unwrap();
        let xt = Image::filled(4, 4, [1, 1, 1]).unwrap();
        let out = himix(&xs, &y_s, &xt, &y_t, &MixConfig::default(), &RngState::new(0)).unwrap();
        assert_eq!(out.mask, MixMask::filled(4, 4, true).unwrap());
        assert_eq!(out.image, xs);
    }

    #[test]
    fn mask_grid_validation() {
        assert!(MixMask::new(1, 2, vec![0, 2]).is_err());
        assert!(MixMask::new(1, 2, vec![0]).is_err());
    }
}
