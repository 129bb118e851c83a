//! Two-dimensional KD-tree over integer grid points with city-block
//! nearest-neighbour queries.
//!
//! Deletion tombstones the node; the tree is rebuilt balanced once more than
//! half of its nodes are dead.

use crate::worldmap::Vertex;

#[derive(Debug, Clone)]
struct Node {
    point: Vertex,
    left: Option<u32>,
    right: Option<u32>,
    alive: bool,
}

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    nodes: Vec<Node>,
    root: Option<u32>,
    live: usize,
}

#[inline]
fn coord(v: Vertex, axis: usize) -> i32 {
    if axis == 0 {
        v.x
    } else {
        v.y
    }
}

impl KdTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: impl IntoIterator<Item = Vertex>) -> Self {
        let mut tree = Self::new();
        let mut pts: Vec<Vertex> = points.into_iter().collect();
        tree.root = tree.build(&mut pts, 0);
        tree.live = tree.nodes.len();
        tree
    }

    fn build(&mut self, pts: &mut [Vertex], depth: usize) -> Option<u32> {
        if pts.is_empty() {
            return None;
        }
        let axis = depth % 2;
        pts.sort_unstable_by_key(|p| (coord(*p, axis), coord(*p, 1 - axis)));
        let mut mid = pts.len() / 2;
        // Equal keys must all land in the right subtree.
        while mid > 0 && coord(pts[mid - 1], axis) == coord(pts[mid], axis) {
            mid -= 1;
        }
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            point: pts[mid],
            left: None,
            right: None,
            alive: true,
        });
        let (lo, hi) = pts.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut hi[1..], depth + 1);
        let node = &mut self.nodes[idx as usize];
        node.left = left;
        node.right = right;
        Some(idx)
    }

    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    /// Number of allocated nodes including tombstones.
    pub fn capacity_used(&self) -> usize {
        self.nodes.len()
    }

    pub fn insert(&mut self, point: Vertex) {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            point,
            left: None,
            right: None,
            alive: true,
        });
        self.live += 1;
        let Some(mut cur) = self.root else {
            self.root = Some(idx);
            return;
        };
        let mut depth = 0;
        loop {
            let axis = depth % 2;
            let node = &mut self.nodes[cur as usize];
            let slot = if coord(point, axis) < coord(node.point, axis) {
                &mut node.left
            } else {
                &mut node.right
            };
            match *slot {
                Some(next) => cur = next,
                None => {
                    *slot = Some(idx);
                    return;
                }
            }
            depth += 1;
        }
    }

    /// Removes one live occurrence of `point`. Returns false if absent.
    pub fn remove(&mut self, point: Vertex) -> bool {
        let mut cur = self.root;
        let mut depth = 0;
        while let Some(i) = cur {
            let node = &mut self.nodes[i as usize];
            if node.alive && node.point == point {
                node.alive = false;
                self.live -= 1;
                if 2 * self.live < self.nodes.len() {
                    self.rebuild();
                }
                return true;
            }
            let axis = depth % 2;
            cur = if coord(point, axis) < coord(node.point, axis) {
                node.left
            } else {
                node.right
            };
            depth += 1;
        }
        false
    }

    fn rebuild(&mut self) {
        let mut pts: Vec<Vertex> = self.iter().collect();
        self.nodes.clear();
        self.root = self.build(&mut pts, 0);
        self.live = self.nodes.len();
    }

    /// Live points in arbitrary order.
    pub fn iter(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.nodes.iter().filter(|n| n.alive).map(|n| n.point)
    }

    /// L1 distance and location of the nearest live point, skipping `exclude`.
    pub fn nearest(&self, query: Vertex, exclude: Option<Vertex>) -> Option<(u32, Vertex)> {
        let mut best: Option<(u32, Vertex)> = None;
        self.search(self.root, 0, query, exclude, &mut best);
        best
    }

    fn search(
        &self,
        cur: Option<u32>,
        depth: usize,
        query: Vertex,
        exclude: Option<Vertex>,
        best: &mut Option<(u32, Vertex)>,
    ) {
        let Some(i) = cur else { return };
        let node = &self.nodes[i as usize];
        if node.alive && Some(node.point) != exclude {
            let d = query.l1(node.point);
            if best.map_or(true, |(bd, bp)| (d, node.point) < (bd, bp)) {
                *best = Some((d, node.point));
            }
        }
        let axis = depth % 2;
        let diff = coord(query, axis) - coord(node.point, axis);
        let (near, far) = if diff < 0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, depth + 1, query, exclude, best);
        // The splitting line bounds the L1 distance to anything on the far side.
        if best.map_or(true, |(bd, _)| diff.unsigned_abs() <= bd) {
            self.search(far, depth + 1, query, exclude, best);
        }
    }
}
