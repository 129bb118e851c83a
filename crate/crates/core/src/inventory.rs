//! Storage occupancy and per-SKU nearest-neighbour indexes.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kdtree::KdTree;
use crate::worldmap::{CellId, GridMap, Vertex};

/// Stock keeping unit identifier in `0..num_skus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkuId(pub u32);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InventoryError {
    #[error("cell {0} is not a storage endpoint")]
    NotStorage(Vertex),
    #[error("cell {0} already holds an item")]
    Occupied(Vertex),
    #[error("cell {0} holds no item")]
    Empty(Vertex),
    #[error("sku {0} out of range")]
    UnknownSku(u32),
}

#[derive(Debug, Clone)]
pub struct Inventory {
    width: usize,
    is_storage: Vec<bool>,
    occupancy: Vec<Option<SkuId>>,
    per_sku: Vec<KdTree>,
    occupied: usize,
    storage_total: usize,
}

impl Inventory {
    pub fn empty(map: &GridMap, num_skus: usize) -> Self {
        let mut is_storage = vec![false; map.num_cells()];
        for &c in map.storage_endpoints() {
            is_storage[c] = true;
        }
        Self {
            width: map.width(),
            is_storage,
            occupancy: vec![None; map.num_cells()],
            per_sku: vec![KdTree::new(); num_skus],
            occupied: 0,
            storage_total: map.storage_endpoints().len(),
        }
    }

    /// Fills `floor(density * storage)` random storage endpoints with
    /// uniformly drawn SKUs.
    pub fn initialize(map: &GridMap, density: f64, num_skus: usize, rng: &mut impl Rng) -> Self {
        assert!((0.0..=1.0).contains(&density), "density must lie in [0, 1]");
        assert!(num_skus > 0 || density == 0.0);
        let mut inv = Self::empty(map, num_skus);
        let target = (density * inv.storage_total as f64).floor() as usize;
        let mut cells = map.storage_endpoints().to_vec();
        // Partial Fisher-Yates keeps the draw sequence independent of the tail.
        for i in 0..target {
            let j = rng.gen_range(i..cells.len());
            cells.swap(i, j);
            let sku = SkuId(rng.gen_range(0..num_skus as u32));
            inv.place_item(cells[i], sku).expect("fresh storage cell");
        }
        inv
    }

    pub fn vertex_of(&self, cell: CellId) -> Vertex {
        Vertex::new((cell % self.width) as i32, (cell / self.width) as i32)
    }

    pub fn num_skus(&self) -> usize {
        self.per_sku.len()
    }

    pub fn place_item(&mut self, cell: CellId, sku: SkuId) -> Result<(), InventoryError> {
        if sku.0 as usize >= self.per_sku.len() {
            return Err(InventoryError::UnknownSku(sku.0));
        }
        if !self.is_storage.get(cell).copied().unwrap_or(false) {
            return Err(InventoryError::NotStorage(self.vertex_of(cell)));
        }
        if self.occupancy[cell].is_some() {
            return Err(InventoryError::Occupied(self.vertex_of(cell)));
        }
        self.occupancy[cell] = Some(sku);
        let v = self.vertex_of(cell);
        self.per_sku[sku.0 as usize].insert(v);
        self.occupied += 1;
        Ok(())
    }

    pub fn remove_item(&mut self, cell: CellId) -> Result<SkuId, InventoryError> {
        let v = self.vertex_of(cell);
        let sku = self
            .occupancy
            .get_mut(cell)
            .and_then(Option::take)
            .ok_or(InventoryError::Empty(v))?;
        let removed = self.per_sku[sku.0 as usize].remove(v);
        debug_assert!(removed);
        self.occupied -= 1;
        Ok(sku)
    }

    pub fn item_at(&self, cell: CellId) -> Option<SkuId> {
        self.occupancy.get(cell).copied().flatten()
    }

    pub fn is_storage(&self, cell: CellId) -> bool {
        self.is_storage.get(cell).copied().unwrap_or(false)
    }

    /// L1 distance from `query` to the closest item of `sku`, ignoring the
    /// item at `exclude`.
    pub fn nearest_neighbor(&self, sku: SkuId, query: Vertex, exclude: Option<Vertex>) -> Option<u32> {
        self.per_sku
            .get(sku.0 as usize)?
            .nearest(query, exclude)
            .map(|(d, _)| d)
    }

    pub fn count(&self, sku: SkuId) -> usize {
        self.per_sku[sku.0 as usize].len()
    }

    pub fn occupied(&self) -> usize {
        self.occupied
    }

    pub fn storage_total(&self) -> usize {
        self.storage_total
    }

    pub fn density(&self) -> f64 {
        if self.storage_total == 0 {
            0.0
        } else {
            self.occupied as f64 / self.storage_total as f64
        }
    }

    /// Cells currently holding `sku`, in cell order.
    pub fn cells_with(&self, sku: SkuId) -> Vec<CellId> {
        let mut cells: Vec<CellId> = self.per_sku[sku.0 as usize]
            .iter()
            .map(|v| v.y as usize * self.width + v.x as usize)
            .collect();
        cells.sort_unstable();
        cells
    }

    /// Empty storage endpoints in cell order.
    pub fn empty_storage(&self) -> Vec<CellId> {
        (0..self.occupancy.len())
            .filter(|&c| self.is_storage[c] && self.occupancy[c].is_none())
            .collect()
    }

    pub fn items(&self) -> impl Iterator<Item = (CellId, SkuId)> + '_ {
        self.occupancy
            .iter()
            .enumerate()
            .filter_map(|(c, s)| s.map(|s| (c, s)))
    }

    /// Rebuilds every index from occupancy and compares contents.
    pub fn indexes_consistent(&self) -> bool {
        self.per_sku.iter().enumerate().all(|(s, tree)| {
            let mut from_tree: Vec<Vertex> = tree.iter().collect();
            let mut from_occ: Vec<Vertex> = self
                .items()
                .filter(|(_, sku)| sku.0 as usize == s)
                .map(|(c, _)| self.vertex_of(c))
                .collect();
            from_tree.sort_unstable();
            from_occ.sort_unstable();
            from_tree == from_occ
        })
    }

    /// Writes `cell_x,cell_y,sku` rows.
    pub fn write_snapshot(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "cell_x,cell_y,sku")?;
        for (c, sku) in self.items() {
            let v = self.vertex_of(c);
            writeln!(out, "{},{},{}", v.x, v.y, sku.0)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldmap::MapAsset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn small_map() -> GridMap {
        GridMap::parse("height 3\nwidth 8\nmap\nEEEEEEEE\n........\nLLLL.EEE\n").unwrap()
    }

    #[test]
    fn place_and_query() {
        let map = small_map();
        let mut inv = Inventory::empty(&map, 2);
        inv.place_item(0, SkuId(1)).unwrap();
        assert_eq!(inv.occupied(), 1);
        assert_eq!(inv.nearest_neighbor(SkuId(1), Vertex::new(0, 0), None), Some(0));
        assert_eq!(
            inv.nearest_neighbor(SkuId(1), Vertex::new(0, 0), Some(Vertex::new(0, 0))),
            None
        );
        assert_eq!(inv.place_item(0, SkuId(0)), Err(InventoryError::Occupied(Vertex::new(0, 0))));
        assert_eq!(inv.place_item(8, SkuId(0)), Err(InventoryError::NotStorage(Vertex::new(0, 1))));
        assert_eq!(inv.place_item(1, SkuId(7)), Err(InventoryError::UnknownSku(7)));
    }

    #[test]
    fn two_items_five_apart() {
        let map = small_map();
        let mut inv = Inventory::empty(&map, 1);
        inv.place_item(map.index(Vertex::new(0, 0)).unwrap(), SkuId(0)).unwrap();
        inv.place_item(map.index(Vertex::new(7, 2)).unwrap(), SkuId(0)).unwrap();
        let d = inv.nearest_neighbor(SkuId(0), Vertex::new(7, 2), Some(Vertex::new(7, 2)));
        assert_eq!(d, Some(9));
        let mut inv = Inventory::empty(&map, 1);
        inv.place_item(map.index(Vertex::new(0, 0)).unwrap(), SkuId(0)).unwrap();
        inv.place_item(map.index(Vertex::new(5, 0)).unwrap(), SkuId(0)).unwrap();
        let d = inv.nearest_neighbor(SkuId(0), Vertex::new(0, 0), Some(Vertex::new(0, 0)));
        assert_eq!(d, Some(5));
    }

    #[test]
    fn remove_is_inverse_of_place() {
        let map = small_map();
        let mut inv = Inventory::empty(&map, 3);
        inv.place_item(3, SkuId(2)).unwrap();
        let before: Vec<_> = inv.items().collect();
        inv.place_item(4, SkuId(1)).unwrap();
        assert_eq!(inv.remove_item(4), Ok(SkuId(1)));
        assert_eq!(inv.items().collect::<Vec<_>>(), before);
        assert!(inv.indexes_consistent());
        assert_eq!(inv.remove_item(4), Err(InventoryError::Empty(Vertex::new(4, 0))));
    }

    #[test]
    fn random_ops_match_shadow_map() {
        let map = MapAsset::Open.load();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut inv = Inventory::empty(&map, 4);
        let mut shadow: BTreeMap<CellId, SkuId> = BTreeMap::new();
        let storage = map.storage_endpoints();
        for _ in 0..100 {
            let c = storage[rng.gen_range(0..storage.len())];
            if let Some(s) = shadow.remove(&c) {
                assert_eq!(inv.remove_item(c), Ok(s));
            } else {
                let s = SkuId(rng.gen_range(0..4));
                inv.place_item(c, s).unwrap();
                shadow.insert(c, s);
            }
        }
        assert_eq!(inv.items().collect::<BTreeMap<_, _>>(), shadow);
        assert!(inv.indexes_consistent());
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let map = MapAsset::Restricted.load();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut inv = Inventory::empty(&map, 1);
        let storage = map.storage_endpoints();
        let mut placed = Vec::new();
        while placed.len() < 50 {
            let c = storage[rng.gen_range(0..storage.len())];
            if inv.place_item(c, SkuId(0)).is_ok() {
                placed.push(map.vertex(c));
            }
        }
        for _ in 0..20 {
            let q = map.vertex(storage[rng.gen_range(0..storage.len())]);
            let exclude = placed.contains(&q).then_some(q);
            let oracle = placed.iter().filter(|p| Some(**p) != exclude).map(|p| q.l1(*p)).min();
            assert_eq!(inv.nearest_neighbor(SkuId(0), q, exclude), oracle);
        }
    }

    #[test]
    fn initialize_extremes() {
        let map = MapAsset::Restricted.load();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(Inventory::initialize(&map, 0.0, 30, &mut rng).occupied(), 0);
        let full = Inventory::initialize(&map, 1.0, 30, &mut rng);
        assert_eq!(full.occupied(), map.storage_endpoints().len());
        assert!(full.empty_storage().is_empty());
        let a = Inventory::initialize(&map, 0.3, 30, &mut ChaCha8Rng::seed_from_u64(9));
        let b = Inventory::initialize(&map, 0.3, 30, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.items().collect::<Vec<_>>(), b.items().collect::<Vec<_>>());
        assert_eq!(a.occupied(), (0.3f64 * 360.0).floor() as usize);
    }

    #[test]
    fn per_sku_counts_average_out() {
        let map = MapAsset::Restricted.load();
        let total = (0.3 * map.storage_endpoints().len() as f64).floor();
        let expected = total / 30.0;
        let mut sums = vec![0usize; 30];
        for seed in 0..100 {
            let inv = Inventory::initialize(&map, 0.3, 30, &mut ChaCha8Rng::seed_from_u64(seed));
            for (s, sum) in sums.iter_mut().enumerate() {
                *sum += inv.count(SkuId(s as u32));
            }
        }
        for sum in sums {
            let mean = sum as f64 / 100.0;
            assert!((mean - expected).abs() <= 0.15 * expected, "mean {mean} vs {expected}");
        }
    }

    #[test]
    fn snapshot_csv() {
        let map = small_map();
        let mut inv = Inventory::empty(&map, 2);
        inv.place_item(2, SkuId(1)).unwrap();
        let mut buf = Vec::new();
        inv.write_snapshot(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "cell_x,cell_y,sku\n2,0,1\n");
    }
}
