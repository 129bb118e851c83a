//! Ten thousand random place/remove/nearest operations against a linear scan.

use std::collections::BTreeMap;

use m2m_core::kdtree::KdTree;
use m2m_core::{CellId, Inventory, MapAsset, SkuId, Vertex};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scan(items: &BTreeMap<CellId, SkuId>, inv: &Inventory, sku: SkuId, q: Vertex, exclude: Option<Vertex>) -> Option<u32> {
    items
        .iter()
        .filter(|&(_, &s)| s == sku)
        .map(|(&c, _)| inv.vertex_of(c))
        .filter(|&v| Some(v) != exclude)
        .map(|v| ((v.x - q.x).abs() + (v.y - q.y).abs()) as u32)
        .min()
}

#[test]
fn ten_thousand_operations_match_linear_scan() {
    let map = MapAsset::Restricted.load();
    let storage = map.storage_endpoints();
    let num_skus = 6;
    let mut inv = Inventory::empty(&map, num_skus);
    let mut shadow: BTreeMap<CellId, SkuId> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut queries = 0;
    for op in 0..10_000 {
        let c = storage[rng.gen_range(0..storage.len())];
        match rng.gen_range(0..3) {
            0 => {
                let s = SkuId(rng.gen_range(0..num_skus as u32));
                let r = inv.place_item(c, s);
                assert_eq!(r.is_ok(), !shadow.contains_key(&c), "op {op}");
                if r.is_ok() {
                    shadow.insert(c, s);
                }
            }
            1 => assert_eq!(inv.remove_item(c).ok(), shadow.remove(&c), "op {op}"),
            _ => {
                let sku = SkuId(rng.gen_range(0..num_skus as u32));
                let q = map.vertex(map.traversable_cells().nth(rng.gen_range(0..map.num_traversable())).unwrap());
                let exclude = rng.gen_bool(0.5).then(|| map.vertex(c));
                assert_eq!(inv.nearest_neighbor(sku, q, exclude), scan(&shadow, &inv, sku, q, exclude), "op {op}");
                queries += 1;
            }
        }
    }
    assert!(queries > 3000);
    assert!(inv.indexes_consistent());
    for s in 0..num_skus as u32 {
        assert_eq!(inv.count(SkuId(s)), shadow.values().filter(|&&x| x == SkuId(s)).count());
    }
    assert_eq!(inv.occupied(), shadow.len());
}

proptest! {
    #[test]
    fn tree_nearest_equals_scan(points in prop::collection::vec((0i32..40, 0i32..40), 0..80),
                                removals in prop::collection::vec(any::<prop::sample::Index>(), 0..40),
                                q in (0i32..40, 0i32..40)) {
        let pts: Vec<Vertex> = points.iter().map(|&(x, y)| Vertex::new(x, y)).collect();
        let mut live = pts.clone();
        let mut tree = KdTree::from_points(pts.iter().copied());
        for r in &removals {
            if live.is_empty() {
                break;
            }
            let p = live.remove(r.index(live.len()));
            prop_assert!(tree.remove(p));
        }
        let q = Vertex::new(q.0, q.1);
        let want = live.iter().map(|p| q.l1(*p)).min();
        prop_assert_eq!(tree.nearest(q, None).map(|x| x.0), want);
        prop_assert_eq!(tree.len(), live.len());
    }
}
