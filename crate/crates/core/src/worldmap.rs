//! Warehouse grid graph, ASCII map parsing and the endpoint distance table.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

/// Kind of a single grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Obstacle,
    StorageEndpoint,
    LoadingEndpoint,
}

impl Cell {
    fn from_char(c: char) -> Option<Self> {
        match c {
            '.' => Some(Cell::Free),
            '@' => Some(Cell::Obstacle),
            'E' => Some(Cell::StorageEndpoint),
            'L' => Some(Cell::LoadingEndpoint),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Cell::Free => '.',
            Cell::Obstacle => '@',
            Cell::StorageEndpoint => 'E',
            Cell::LoadingEndpoint => 'L',
        }
    }

    pub fn is_traversable(self) -> bool {
        self != Cell::Obstacle
    }

    pub fn is_endpoint(self) -> bool {
        matches!(self, Cell::StorageEndpoint | Cell::LoadingEndpoint)
    }
}

/// A grid coordinate. `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vertex {
    pub x: i32,
    pub y: i32,
}

impl Vertex {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    /// City-block distance.
    pub fn l1(self, other: Vertex) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Dense cell index, `y * width + x`.
pub type CellId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("malformed header on line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("unknown cell character {ch:?} at row {row}, column {col}")]
    UnknownCell { row: usize, col: usize, ch: char },
    #[error("map body does not match declared {width}x{height}: {reason}")]
    DimensionMismatch {
        width: usize,
        height: usize,
        reason: String,
    },
    #[error("free space is disconnected: cell {0} is unreachable")]
    Disconnected(Vertex),
    #[error("map has no traversable cells")]
    Empty,
    #[error("map has no storage or loading endpoints")]
    NoEndpoints,
}

/// 4-connected warehouse grid.
#[derive(Debug, Clone)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    storage: Vec<CellId>,
    loading: Vec<CellId>,
    endpoints: Vec<CellId>,
    endpoint_slot: Vec<Option<u32>>,
}

impl GridMap {
    /// Parses the ASCII map format and checks that free space is connected.
    ///
    /// A map without endpoints is accepted here; [`GridMap::parse_warehouse`]
    /// additionally rejects it.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut lines = text.lines().enumerate();
        let height = header_value(lines.next(), "height")?;
        let width = header_value(lines.next(), "width")?;
        match lines.next() {
            Some((_, l)) if l.trim() == "map" => {}
            Some((i, l)) => {
                return Err(MapError::MalformedHeader {
                    line: i + 1,
                    reason: format!("expected `map`, found {l:?}"),
                })
            }
            None => {
                return Err(MapError::MalformedHeader {
                    line: 3,
                    reason: "missing `map` line".into(),
                })
            }
        }
        if width == 0 || height == 0 {
            return Err(MapError::MalformedHeader {
                line: 1,
                reason: "dimensions must be positive".into(),
            });
        }

        let mut cells = Vec::with_capacity(width * height);
        let mut rows = 0;
        for (_, line) in lines {
            let line = line.trim_end_matches('\r');
            if line.is_empty() && rows == height {
                continue;
            }
            if rows == height {
                return Err(MapError::DimensionMismatch {
                    width,
                    height,
                    reason: "too many rows".into(),
                });
            }
            let mut n = 0;
            for (col, ch) in line.chars().enumerate() {
                let cell = Cell::from_char(ch).ok_or(MapError::UnknownCell { row: rows, col, ch })?;
                cells.push(cell);
                n += 1;
            }
            if n != width {
                return Err(MapError::DimensionMismatch {
                    width,
                    height,
                    reason: format!("row {rows} has {n} cells"),
                });
            }
            rows += 1;
        }
        if rows != height {
            return Err(MapError::DimensionMismatch {
                width,
                height,
                reason: format!("found {rows} rows"),
            });
        }
        Self::from_cells(width, height, cells)
    }

    /// Like [`GridMap::parse`] but also requires at least one endpoint.
    pub fn parse_warehouse(text: &str) -> Result<Self, MapError> {
        let map = Self::parse(text)?;
        if map.endpoints.is_empty() {
            return Err(MapError::NoEndpoints);
        }
        Ok(map)
    }

    pub fn from_cells(width: usize, height: usize, cells: Vec<Cell>) -> Result<Self, MapError> {
        assert_eq!(cells.len(), width * height);
        let mut storage = Vec::new();
        let mut loading = Vec::new();
        let mut endpoints = Vec::new();
        let mut endpoint_slot = vec![None; cells.len()];
        for (i, c) in cells.iter().enumerate() {
            match c {
                Cell::StorageEndpoint => storage.push(i),
                Cell::LoadingEndpoint => loading.push(i),
                _ => continue,
            }
            endpoint_slot[i] = Some(endpoints.len() as u32);
            endpoints.push(i);
        }
        let map = Self {
            width,
            height,
            cells,
            storage,
            loading,
            endpoints,
            endpoint_slot,
        };
        map.check_connected()?;
        Ok(map)
    }

    fn check_connected(&self) -> Result<(), MapError> {
        let first = self
            .cells
            .iter()
            .position(|c| c.is_traversable())
            .ok_or(MapError::Empty)?;
        let dist = self.bfs(first);
        match (0..self.cells.len()).find(|&i| self.cells[i].is_traversable() && dist[i] == UNREACHABLE) {
            Some(i) => Err(MapError::Disconnected(self.vertex(i))),
            None => Ok(()),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, id: CellId) -> Cell {
        self.cells[id]
    }

    pub fn cell_at(&self, v: Vertex) -> Option<Cell> {
        self.index(v).map(|i| self.cells[i])
    }

    pub fn index(&self, v: Vertex) -> Option<CellId> {
        if v.x < 0 || v.y < 0 || v.x as usize >= self.width || v.y as usize >= self.height {
            return None;
        }
        Some(v.y as usize * self.width + v.x as usize)
    }

    pub fn vertex(&self, id: CellId) -> Vertex {
        Vertex::new((id % self.width) as i32, (id / self.width) as i32)
    }

    pub fn is_traversable(&self, id: CellId) -> bool {
        self.cells[id].is_traversable()
    }

    pub fn num_traversable(&self) -> usize {
        self.cells.iter().filter(|c| c.is_traversable()).count()
    }

    pub fn storage_endpoints(&self) -> &[CellId] {
        &self.storage
    }

    pub fn loading_endpoints(&self) -> &[CellId] {
        &self.loading
    }

    /// All endpoints in cell order.
    pub fn endpoints(&self) -> &[CellId] {
        &self.endpoints
    }

    pub fn endpoint_slot(&self, id: CellId) -> Option<usize> {
        self.endpoint_slot[id].map(|s| s as usize)
    }

    pub fn traversable_cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.cells.len()).filter(|&i| self.cells[i].is_traversable())
    }

    /// Traversable 4-neighbours of `id`, in a fixed order (up, left, right, down).
    pub fn neighbors(&self, id: CellId) -> impl Iterator<Item = CellId> + '_ {
        let (x, y) = (id % self.width, id / self.width);
        let up = (y > 0).then(|| id - self.width);
        let left = (x > 0).then(|| id - 1);
        let right = (x + 1 < self.width).then(|| id + 1);
        let down = (y + 1 < self.height).then(|| id + self.width);
        [up, left, right, down]
            .into_iter()
            .flatten()
            .filter(move |&n| self.cells[n].is_traversable())
    }

    pub fn are_adjacent(&self, a: CellId, b: CellId) -> bool {
        self.vertex(a).l1(self.vertex(b)) == 1
    }

    /// Unit-cost breadth-first distances from `source` to every cell.
    pub fn bfs(&self, source: CellId) -> Vec<u32> {
        let mut dist = vec![UNREACHABLE; self.cells.len()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let d = dist[u] + 1;
            for v in self.neighbors(u) {
                if dist[v] == UNREACHABLE {
                    dist[v] = d;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Renders the map back into the ASCII format.
    pub fn to_ascii(&self) -> String {
        let mut out = format!("height {}\nwidth {}\nmap\n", self.height, self.width);
        for row in self.cells.chunks(self.width) {
            out.extend(row.iter().map(|c| c.to_char()));
            out.push('\n');
        }
        out
    }
}

pub(crate) const UNREACHABLE: u32 = u32::MAX;

fn header_value(line: Option<(usize, &str)>, key: &str) -> Result<usize, MapError> {
    let (i, line) = line.ok_or_else(|| MapError::MalformedHeader {
        line: 0,
        reason: format!("missing `{key}` line"),
    })?;
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => v.parse().map_err(|_| MapError::MalformedHeader {
            line: i + 1,
            reason: format!("`{v}` is not a valid {key}"),
        }),
        _ => Err(MapError::MalformedHeader {
            line: i + 1,
            reason: format!("expected `{key} <n>`, found {line:?}"),
        }),
    }
}

/// Bundled 27x50 layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapAsset {
    /// Long two-lane aisles that can only be entered from the loading side.
    Restricted,
    /// Same aisles, open at both ends.
    OpenTop,
    /// Grid of shelf blocks.
    Open,
}

impl MapAsset {
    pub const ALL: [MapAsset; 3] = [MapAsset::Restricted, MapAsset::OpenTop, MapAsset::Open];

    pub fn name(self) -> &'static str {
        match self {
            MapAsset::Restricted => "restricted",
            MapAsset::OpenTop => "open-top",
            MapAsset::Open => "open",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            MapAsset::Restricted => include_str!("../maps/restricted.map"),
            MapAsset::OpenTop => include_str!("../maps/open_top.map"),
            MapAsset::Open => include_str!("../maps/open.map"),
        }
    }

    pub fn load(self) -> GridMap {
        GridMap::parse_warehouse(self.source()).expect("bundled map is valid")
    }
}

impl std::str::FromStr for MapAsset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "restricted" => Ok(MapAsset::Restricted),
            "open-top" | "open_top" | "opentop" => Ok(MapAsset::OpenTop),
            "open" => Ok(MapAsset::Open),
            other => Err(format!("unknown map asset `{other}`")),
        }
    }
}

impl fmt::Display for MapAsset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no precomputed distance between {from} and {to}: neither is an endpoint")]
pub struct OracleError {
    pub from: Vertex,
    pub to: Vertex,
}

/// Exact shortest-path lengths from every endpoint to every cell.
///
/// Rows are BFS trees rooted at endpoints; a lookup between an arbitrary cell
/// and an endpoint reads the endpoint's row, which is exact on an undirected
/// grid.
#[derive(Debug, Clone)]
pub struct DistanceOracle {
    num_cells: usize,
    slot: Vec<Option<u32>>,
    table: Vec<u32>,
}

impl DistanceOracle {
    pub fn build(map: &GridMap) -> Self {
        let num_cells = map.num_cells();
        let mut table = Vec::with_capacity(map.endpoints().len() * num_cells);
        for &ep in map.endpoints() {
            table.extend(map.bfs(ep));
        }
        Self {
            num_cells,
            slot: map.endpoint_slot.clone(),
            table,
        }
    }

    pub fn is_endpoint(&self, cell: CellId) -> bool {
        self.slot[cell].is_some()
    }

    /// Distance row rooted at `cell`, if it is an endpoint.
    pub fn row(&self, cell: CellId) -> Option<&[u32]> {
        self.slot[cell].map(|s| {
            let s = s as usize * self.num_cells;
            &self.table[s..s + self.num_cells]
        })
    }

    /// Shortest-path length in timesteps. At least one side must be an
    /// endpoint.
    pub fn try_cost(&self, from: CellId, to: CellId) -> Option<u32> {
        let d = match (self.row(from), self.row(to)) {
            (Some(row), _) => row[to],
            (None, Some(row)) => row[from],
            (None, None) => return None,
        };
        (d != UNREACHABLE).then_some(d)
    }

    /// Panicking lookup for hot paths where one side is known to be an endpoint.
    #[inline]
    pub fn cost(&self, from: CellId, to: CellId) -> u32 {
        self.try_cost(from, to)
            .unwrap_or_else(|| panic!("no distance entry between cells {from} and {to}"))
    }

    pub fn estimated_cost(&self, map: &GridMap, from: Vertex, to: Vertex) -> Result<u32, OracleError> {
        let err = || OracleError { from, to };
        let (a, b) = (map.index(from).ok_or_else(err)?, map.index(to).ok_or_else(err)?);
        self.try_cost(a, b).ok_or_else(err)
    }
}
