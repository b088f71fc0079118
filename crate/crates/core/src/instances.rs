//! Connected-component labeling of semantic label maps.
//!
//! Each maximal set of same-class pixels that are connected under the chosen
//! neighborhood becomes one instance. Ignore pixels never belong to an
//! instance and carry id 0.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, Grid, LabelMap, IGNORE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "4" => Ok(Connectivity::Four),
            "8" => Ok(Connectivity::Eight),
            other => Err(Error::InvalidParameter(format!(
                "connectivity must be 4 or 8, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Connectivity::Four => f.write_str("4"),
            Connectivity::Eight => f.write_str("8"),
        }
    }
}

/// Which side of the adaptation a label or instance comes from. Source
/// orders before target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Source => f.write_str("source"),
            Domain::Target => f.write_str("target"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instance {
    pub id: u32,
    pub class: u8,
    pub domain: Domain,
    pub pixel_count: usize,
}

/// Per-pixel instance ids (0 = ignore) with the instance table.
///
/// Ids form the contiguous range `offset+1 ..= offset+N`; a freshly extracted
/// map has offset 0, and [`relabel_disjoint`] shifts the second map of a pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMap {
    height: usize,
    width: usize,
    domain: Domain,
    offset: u32,
    ids: Vec<u32>,
    table: Vec<Instance>,
}

impl InstanceMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Instances ordered by id.
    pub fn table(&self) -> &[Instance] {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn max_id(&self) -> u32 {
        self.offset + self.table.len() as u32
    }

    pub fn get(&self, id: u32) -> Option<&Instance> {
        if id <= self.offset {
            return None;
        }
        self.table.get((id - self.offset - 1) as usize)
    }

    /// Slot of `id` in [`InstanceMap::table`], for ids owned by this map.
    pub(crate) fn slot(&self, id: u32) -> Option<usize> {
        (id > self.offset && id <= self.max_id()).then(|| (id - self.offset - 1) as usize)
    }

    /// Paints every instance with its class, reconstructing the semantic map.
    pub fn to_label_map(&self, num_classes: u8) -> Result<LabelMap> {
        let data = self
            .ids
            .iter()
            .map(|&id| self.get(id).map_or(IGNORE, |inst| inst.class))
            .collect();
        LabelMap::new(self.height, self.width, num_classes, data)
    }

    /// Sidecar table text: header `id,class,domain,count`, one row per
    /// instance, LF line endings.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("id,class,domain,count\n");
        for inst in &self.table {
            out.push_str(&format!(
                "{},{},{},{}\n",
                inst.id, inst.class, inst.domain, inst.pixel_count
            ));
        }
        out
    }
}

struct DisjointSets {
    parent: Vec<u32>,
}

impl DisjointSets {
    fn with_capacity(n: usize) -> Self {
        // label 0 is a sentinel so provisional labels index directly
        let mut parent = Vec::with_capacity(n + 1);
        parent.push(0);
        Self { parent }
    }

    fn make_set(&mut self) -> u32 {
        let label = self.parent.len() as u32;
        self.parent.push(label);
        label
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// Links the two roots; the smaller label becomes the root.
    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Two-pass union-find labeling. Ids are assigned in raster order of each
/// component's first pixel.
pub fn extract_instances(
    labels: &LabelMap,
    connectivity: Connectivity,
    domain: Domain,
) -> InstanceMap {
    let (h, w) = labels.shape();
    let y = labels.data();
    let mut provisional = vec![0u32; h * w];
    let mut sets = DisjointSets::with_capacity(h * w / 4 + 1);

    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let class = y[i];
            if class == IGNORE {
                continue;
            }
            let mut label = 0u32;
            let mut visit = |j: usize, label: &mut u32| {
                if y[j] == class {
                    let other = provisional[j];
                    *label = if *label == 0 {
                        sets.find(other)
                    } else if *label != other {
                        sets.union(*label, other)
                    } else {
                        *label
                    };
                }
            };
            if col > 0 {
                visit(i - 1, &mut label);
            }
            if row > 0 {
                let up = i - w;
                if connectivity == Connectivity::Eight && col > 0 {
                    visit(up - 1, &mut label);
                }
                visit(up, &mut label);
                if connectivity == Connectivity::Eight && col + 1 < w {
                    visit(up + 1, &mut label);
                }
            }
            provisional[i] = if label == 0 { sets.make_set() } else { label };
        }
    }

    // second pass: resolve roots to dense ids in order of first appearance
    let mut dense = vec![0u32; sets.parent.len()];
    let mut table: Vec<Instance> = Vec::new();
    for (i, slot) in provisional.iter_mut().enumerate() {
        if *slot == 0 {
            continue;
        }
        let root = sets.find(*slot) as usize;
        if dense[root] == 0 {
            table.push(Instance {
                id: table.len() as u32 + 1,
                class: y[i],
                domain,
                pixel_count: 0,
            });
            dense[root] = table.len() as u32;
        }
        let id = dense[root];
        table[(id - 1) as usize].pixel_count += 1;
        *slot = id;
    }

    InstanceMap {
        height: h,
        width: w,
        domain,
        offset: 0,
        ids: provisional,
        table,
    }
}

/// Shifts `b`'s ids past `a`'s largest id so the two id ranges are disjoint.
pub fn relabel_disjoint(a: InstanceMap, b: InstanceMap) -> (InstanceMap, InstanceMap) {
    if b.is_empty() {
        return (a, b);
    }
    let shift = a.max_id().saturating_sub(b.offset);
    if shift == 0 {
        return (a, b);
    }
    let mut b = b;
    for id in b.ids.iter_mut().filter(|id| **id != 0) {
        *id += shift;
    }
    for inst in &mut b.table {
        inst.id += shift;
    }
    b.offset += shift;
    (a, b)
}

impl InstanceMap {
    /// Consistency check against the label map the instances came from.
    pub fn check_against(&self, labels: &LabelMap) -> Result<()> {
        ensure_same_shape("instance map vs labels", self.shape(), labels.shape())?;
        let mut counts = vec![0usize; self.table.len()];
        for (i, (&id, &class)) in self.ids.iter().zip(labels.data()).enumerate() {
            if class == IGNORE {
                if id != 0 {
                    return Err(Error::InvalidParameter(format!(
                        "ignore pixel {i} carries instance id {id}"
                    )));
                }
                continue;
            }
            let slot = self.slot(id).ok_or_else(|| {
                Error::InvalidParameter(format!("pixel {i} has unknown instance id {id}"))
            })?;
            if self.table[slot].class != class {
                return Err(Error::InvalidParameter(format!(
                    "pixel {i}: instance {id} has class {} but label is {class}",
                    self.table[slot].class
                )));
            }
            counts[slot] += 1;
        }
        for (inst, n) in self.table.iter().zip(counts) {
            if inst.pixel_count != n {
                return Err(Error::InvalidParameter(format!(
                    "instance {} records {} pixels, found {n}",
                    inst.id, inst.pixel_count
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOREST: u8 = 5;
    const ROAD: u8 = 2;

    #[test]
    fn uniform_map_is_one_instance() {
        let y = LabelMap::filled(4, 4, 7, 2).unwrap();
        let inst = extract_instances(&y, Connectivity::Four, Domain::Source);
        assert_eq!(inst.len(), 1);
        assert_eq!(inst.table()[0].pixel_count, 16);
        assert_eq!(inst.table()[0].class, 2);
    }

    #[test]
    fn road_splits_forest() {
        let mut data = vec![FOREST; 25];
        for row in 0..5 {
            data[row * 5 + 2] = ROAD;
        }
        let y = LabelMap::new(5, 5, 7, data).unwrap();
        for conn in [Connectivity::Four, Connectivity::Eight] {
            let inst = extract_instances(&y, conn, Domain::Source);
            let mut summary: Vec<(u8, usize)> =
                inst.table().iter().map(|i| (i.class, i.pixel_count)).collect();
            summary.sort();
            assert_eq!(summary, vec![(ROAD, 5), (FOREST, 10), (FOREST, 10)]);
            inst.check_against(&y).unwrap();
        }
    }

    #[test]
    fn diagonal_connects_only_with_eight() {
        let y = LabelMap::new(2, 2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(extract_instances(&y, Connectivity::Four, Domain::Source).len(), 4);
        assert_eq!(extract_instances(&y, Connectivity::Eight, Domain::Source).len(), 2);
    }

    #[test]
    fn ignore_pixels_get_id_zero() {
        let y = LabelMap::new(1, 3, 2, vec![1, IGNORE, 1]).unwrap();
        let inst = extract_instances(&y, Connectivity::Eight, Domain::Target);
        assert_eq!(inst.ids(), &[1, 0, 2]);
        assert!(inst.table().iter().all(|i| i.domain == Domain::Target));
    }

    #[test]
    fn u_shape_merges_late() {
        // both arms of the U get separate provisional labels and merge on the last row
        let y = LabelMap::new(3, 3, 2, vec![1, 0, 1, 1, 0, 1, 1, 1, 1]).unwrap();
        let inst = extract_instances(&y, Connectivity::Four, Domain::Source);
        assert_eq!(inst.len(), 2);
        assert_eq!(inst.ids(), &[1, 2, 1, 1, 2, 1, 1, 1, 1]);
        assert_eq!(inst.get(1).unwrap().pixel_count, 7);
    }

    #[test]
    fn relabel_offsets_second_map() {
        let a = extract_instances(
            &LabelMap::new(1, 3, 2, vec![0, 1, 1]).unwrap(),
            Connectivity::Four,
            Domain::Source,
        );
        let b = extract_instances(
            &LabelMap::filled(1, 3, 2, 0).unwrap(),
            Connectivity::Four,
            Domain::Target,
        );
        let (a, b) = relabel_disjoint(a, b);
        assert_eq!(a.ids(), &[1, 2, 2]);
        assert_eq!(b.ids(), &[3, 3, 3]);
        assert_eq!(b.table()[0].id, 3);
        assert_eq!(b.get(3).unwrap().pixel_count, 3);
        assert!(b.get(1).is_none());
    }

    #[test]
    fn relabel_leaves_empty_map() {
        let a = extract_instances(&LabelMap::filled(2, 2, 2, 1).unwrap(), Connectivity::Four, Domain::Source);
        let b = extract_instances(&LabelMap::filled(2, 2, 2, IGNORE).unwrap(), Connectivity::Four, Domain::Target);
        let before = b.clone();
        let (_, b) = relabel_disjoint(a, b);
        assert_eq!(b, before);
    }

    #[test]
    fn table_csv_format() {
        let y = LabelMap::new(1, 2, 3, vec![2, 2]).unwrap();
        let inst = extract_instances(&y, Connectivity::Four, Domain::Source);
        assert_eq!(inst.table_csv(), "id,class,domain,count\n1,2,source,2\n");
    }
}
