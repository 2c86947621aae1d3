//! Multi-layer 2D occupancy maps, Bresenham rays and hit-point extraction.

use crate::geometry::{Pose, Vec3};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OccupancyError {
    #[error("cell ({ix}, {iy}) is outside the {cols}x{rows} layer")]
    OutOfBounds { ix: i64, iy: i64, cols: usize, rows: usize },
    #[error("point ({x:.3}, {y:.3}) is outside the layer")]
    PointOutOfBounds { x: f64, y: f64 },
    #[error("invalid map: {0}")]
    InvalidMap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
#[repr(i8)]
pub enum Cell {
    Unknown = -1,
    Free = 0,
    Occupied = 1,
}

impl From<Cell> for i8 {
    fn from(c: Cell) -> i8 {
        c as i8
    }
}

impl TryFrom<i8> for Cell {
    type Error = String;
    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Cell::Unknown),
            0 => Ok(Cell::Free),
            1 => Ok(Cell::Occupied),
            other => Err(format!("cell value {other} not in {{-1, 0, 1}}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridIndex {
    pub ix: i64,
    pub iy: i64,
}

impl GridIndex {
    pub const fn new(ix: i64, iy: i64) -> Self {
        Self { ix, iy }
    }
}

/// Which cell along a ray counts as its hit point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitRule {
    /// First occupied or unknown cell, origin excluded.
    #[default]
    FirstInformative,
    /// First free or occupied cell, origin included.
    FirstKnown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    Occupied,
    UnknownBoundary,
    /// Nothing informative before the range limit or the map edge.
    RangeLimit,
    /// Only produced by [`HitRule::FirstKnown`].
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub cell: GridIndex,
    pub point: [f64; 2],
    pub kind: HitKind,
}

/// Far endpoint used to turn a heading into an integer Bresenham line.
pub const RAY_SCALE: f64 = (1u64 << 20) as f64;

/// Integer step vector for heading `theta`.
pub fn ray_steps(theta: f64) -> (i64, i64) {
    (
        (RAY_SCALE * theta.cos()).round() as i64,
        (RAY_SCALE * theta.sin()).round() as i64,
    )
}

/// Unbounded Bresenham walk from `origin` toward heading `theta`.
#[derive(Debug, Clone)]
pub struct BresenhamRay {
    cur: GridIndex,
    sx: i64,
    sy: i64,
    adx: i64,
    ady: i64,
    err: i64,
    started: bool,
}

impl BresenhamRay {
    pub fn new(origin: GridIndex, theta: f64) -> Self {
        let (dx, dy) = ray_steps(theta);
        let (adx, ady) = (dx.abs(), dy.abs());
        let err = if adx >= ady { 2 * ady - adx } else { 2 * adx - ady };
        Self {
            cur: origin,
            sx: dx.signum(),
            sy: dy.signum(),
            adx,
            ady,
            err,
            started: false,
        }
    }
}

impl Iterator for BresenhamRay {
    type Item = GridIndex;

    fn next(&mut self) -> Option<GridIndex> {
        if !self.started {
            self.started = true;
            return Some(self.cur);
        }
        if self.adx >= self.ady {
            self.cur.ix += self.sx;
            if self.err > 0 {
                self.cur.iy += self.sy;
                self.err -= 2 * self.adx;
            }
            self.err += 2 * self.ady;
        } else {
            self.cur.iy += self.sy;
            if self.err > 0 {
                self.cur.ix += self.sx;
                self.err -= 2 * self.ady;
            }
            self.err += 2 * self.adx;
        }
        Some(self.cur)
    }
}

/// Ray cells starting at `origin`, truncated at the `cols x rows` boundary or
/// after `max_cells` cells.
pub fn bresenham_ray(origin: GridIndex, theta: f64, max_cells: usize, cols: usize, rows: usize) -> Vec<GridIndex> {
    BresenhamRay::new(origin, theta)
        .take_while(|c| c.ix >= 0 && c.iy >= 0 && (c.ix as usize) < cols && (c.iy as usize) < rows)
        .take(max_cells)
        .collect()
}

/// One height layer. Cells are row-major with `iy` as the row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMap {
    pub height: f64,
    pub resolution: f64,
    pub origin: [f64; 2],
    pub cols: usize,
    pub rows: usize,
    pub cells: Vec<Cell>,
}

impl LayerMap {
    pub fn new(height: f64, resolution: f64, origin: [f64; 2], cols: usize, rows: usize) -> Self {
        Self::filled(height, resolution, origin, cols, rows, Cell::Unknown)
    }

    pub fn filled(height: f64, resolution: f64, origin: [f64; 2], cols: usize, rows: usize, value: Cell) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            height,
            resolution,
            origin,
            cols,
            rows,
            cells: vec![value; cols * rows],
        }
    }

    pub fn validate(&self) -> Result<(), OccupancyError> {
        if !(self.resolution > 0.0) {
            return Err(OccupancyError::InvalidMap("resolution must be positive".into()));
        }
        if self.cells.len() != self.cols * self.rows {
            return Err(OccupancyError::InvalidMap(format!(
                "expected {} cells, found {}",
                self.cols * self.rows,
                self.cells.len()
            )));
        }
        Ok(())
    }

    /// Same geometry, every cell unknown.
    pub fn blank_like(&self) -> Self {
        Self::new(self.height, self.resolution, self.origin, self.cols, self.rows)
    }

    pub fn in_bounds(&self, c: GridIndex) -> bool {
        c.ix >= 0 && c.iy >= 0 && (c.ix as usize) < self.cols && (c.iy as usize) < self.rows
    }

    fn offset(&self, c: GridIndex) -> Result<usize, OccupancyError> {
        if self.in_bounds(c) {
            Ok(c.iy as usize * self.cols + c.ix as usize)
        } else {
            Err(OccupancyError::OutOfBounds {
                ix: c.ix,
                iy: c.iy,
                cols: self.cols,
                rows: self.rows,
            })
        }
    }

    pub fn occ(&self, c: GridIndex) -> Result<Cell, OccupancyError> {
        Ok(self.cells[self.offset(c)?])
    }

    /// Occupancy with out-of-bounds cells reported as unknown.
    pub fn get(&self, c: GridIndex) -> Cell {
        self.occ(c).unwrap_or(Cell::Unknown)
    }

    pub fn set(&mut self, c: GridIndex, value: Cell) -> Result<(), OccupancyError> {
        let i = self.offset(c)?;
        self.cells[i] = value;
        Ok(())
    }

    /// Containing cell; points on an edge belong to the higher index.
    pub fn cell_of(&self, x: f64, y: f64) -> GridIndex {
        let fx = (x - self.origin[0]) / self.resolution;
        let fy = (y - self.origin[1]) / self.resolution;
        GridIndex::new((fx + 1e-9).floor() as i64, (fy + 1e-9).floor() as i64)
    }

    pub fn cell_at(&self, p: &Vec3) -> Result<GridIndex, OccupancyError> {
        let c = self.cell_of(p.x, p.y);
        if self.in_bounds(c) {
            Ok(c)
        } else {
            Err(OccupancyError::PointOutOfBounds { x: p.x, y: p.y })
        }
    }

    pub fn center(&self, c: GridIndex) -> [f64; 2] {
        [
            self.origin[0] + (c.ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (c.iy as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn center3(&self, c: GridIndex) -> Vec3 {
        let [x, y] = self.center(c);
        Vec3::new(x, y, self.height)
    }

    fn center_dist(&self, a: GridIndex, b: GridIndex) -> f64 {
        ((a.ix - b.ix) as f64).hypot((a.iy - b.iy) as f64) * self.resolution
    }

    pub fn ray(&self, origin: GridIndex, theta: f64, max_cells: usize) -> Vec<GridIndex> {
        bresenham_ray(origin, theta, max_cells, self.cols, self.rows)
    }

    /// In-bounds ray cells whose centers lie within `d_max` of the origin's center.
    pub fn ray_within(&self, origin: GridIndex, theta: f64, d_max: f64) -> impl Iterator<Item = GridIndex> + '_ {
        BresenhamRay::new(origin, theta)
            .take_while(move |c| self.in_bounds(*c) && self.center_dist(origin, *c) <= d_max + 1e-9)
    }

    pub fn cast_hit(&self, viewpoint: &Vec3, theta: f64, d_max: f64, rule: HitRule) -> Result<Hit, OccupancyError> {
        let origin = self.cell_at(viewpoint)?;
        let mut last = origin;
        for (i, cell) in self.ray_within(origin, theta, d_max).enumerate() {
            let value = self.get(cell);
            let kind = match rule {
                HitRule::FirstInformative if i > 0 => match value {
                    Cell::Occupied => Some(HitKind::Occupied),
                    Cell::Unknown => Some(HitKind::UnknownBoundary),
                    Cell::Free => None,
                },
                HitRule::FirstInformative => None,
                HitRule::FirstKnown => match value {
                    Cell::Occupied => Some(HitKind::Occupied),
                    Cell::Free => Some(HitKind::Free),
                    Cell::Unknown => None,
                },
            };
            if let Some(kind) = kind {
                return Ok(Hit {
                    cell,
                    point: self.center(cell),
                    kind,
                });
            }
            last = cell;
        }
        Ok(Hit {
            cell: last,
            point: self.center(last),
            kind: HitKind::RangeLimit,
        })
    }

    /// Simulated 360-degree range scan against ground truth `world`.
    pub fn raycast_update(
        &mut self,
        sensor: &Pose,
        world: &LayerMap,
        n_rays: usize,
        d_max: f64,
    ) -> Result<(), OccupancyError> {
        let origin = self.cell_at(&sensor.pos())?;
        world.occ(origin)?;
        for i in 0..n_rays {
            let theta = sensor.yaw + 2.0 * PI * i as f64 / n_rays as f64;
            for cell in world.ray_within(origin, theta, d_max) {
                match world.get(cell) {
                    Cell::Occupied => {
                        self.set(cell, Cell::Occupied)?;
                        break;
                    }
                    Cell::Unknown => break,
                    Cell::Free => self.set(cell, Cell::Free)?,
                }
            }
        }
        Ok(())
    }

    /// True iff every cell whose center lies closer than `r_clr` to `c` is
    /// in bounds and free.
    pub fn has_clearance(&self, c: GridIndex, r_clr: f64) -> bool {
        if self.get(c) != Cell::Free {
            return false;
        }
        let n = (r_clr / self.resolution).ceil() as i64;
        let lim = r_clr - 1e-9;
        for dy in -n..=n {
            for dx in -n..=n {
                if (dx as f64).hypot(dy as f64) * self.resolution >= lim {
                    continue;
                }
                if self.get(GridIndex::new(c.ix + dx, c.iy + dy)) != Cell::Free {
                    return false;
                }
            }
        }
        true
    }

    pub fn clearance_mask(&self, r_clr: f64) -> Vec<bool> {
        (0..self.rows)
            .flat_map(|iy| (0..self.cols).map(move |ix| GridIndex::new(ix as i64, iy as i64)))
            .map(|c| self.has_clearance(c, r_clr))
            .collect()
    }

    pub fn count(&self, value: Cell) -> usize {
        self.cells.iter().filter(|c| **c == value).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = GridIndex> + '_ {
        (0..self.rows).flat_map(move |iy| (0..self.cols).map(move |ix| GridIndex::new(ix as i64, iy as i64)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLayerMap {
    pub layers: Vec<LayerMap>,
    pub layer_spacing: f64,
}

impl MultiLayerMap {
    pub fn new(layers: Vec<LayerMap>, layer_spacing: f64) -> Result<Self, OccupancyError> {
        let m = Self { layers, layer_spacing };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), OccupancyError> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| OccupancyError::InvalidMap("no layers".into()))?;
        if !(self.layer_spacing > 0.0) {
            return Err(OccupancyError::InvalidMap("layer spacing must be positive".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if l.resolution != first.resolution
                || l.origin != first.origin
                || l.cols != first.cols
                || l.rows != first.rows
            {
                return Err(OccupancyError::InvalidMap(format!(
                    "layer {i} geometry differs from layer 0"
                )));
            }
            let expected = first.height + i as f64 * self.layer_spacing;
            if (l.height - expected).abs() > 1e-6 {
                return Err(OccupancyError::InvalidMap(format!(
                    "layer {i} height {} breaks uniform spacing",
                    l.height
                )));
            }
        }
        Ok(())
    }

    pub fn blank_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LayerMap::blank_like).collect(),
            layer_spacing: self.layer_spacing,
        }
    }

    /// Layer whose height is nearest to `z`, if within half a spacing.
    pub fn layer_index(&self, z: f64) -> Option<usize> {
        let base = self.layers[0].height;
        let f = ((z - base) / self.layer_spacing).round();
        if f < 0.0 || f as usize >= self.layers.len() {
            return None;
        }
        let i = f as usize;
        ((self.layers[i].height - z).abs() <= self.layer_spacing / 2.0 + 1e-9).then_some(i)
    }

    pub fn resolution(&self) -> f64 {
        self.layers[0].resolution
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    cost: f64,
    idx: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Node of a (possibly multi-layer) grid graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Node {
    pub layer: usize,
    pub cell: GridIndex,
}

/// Single-source shortest path costs over free cells, 8-connected within a
/// layer (no corner cutting) plus vertical moves between identical cells of
/// adjacent layers.
#[derive(Debug, Clone)]
pub struct DistanceField {
    cols: usize,
    rows: usize,
    dist: Vec<f64>,
    parent: Vec<usize>,
}

impl DistanceField {
    pub fn compute(map: &MultiLayerMap, sources: &[Node], vertical: bool) -> Self {
        let l0 = &map.layers[0];
        let (cols, rows) = (l0.cols, l0.rows);
        let per = cols * rows;
        let n = per * map.layers.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        let free = |idx: usize| map.layers[idx / per].cells[idx % per] == Cell::Free;
        for s in sources {
            if !map.layers[s.layer].in_bounds(s.cell) {
                continue;
            }
            let idx = s.layer * per + s.cell.iy as usize * cols + s.cell.ix as usize;
            if free(idx) {
                dist[idx] = 0.0;
                heap.push(HeapItem { cost: 0.0, idx });
            }
        }
        let res = l0.resolution;
        while let Some(HeapItem { cost, idx }) = heap.pop() {
            if cost > dist[idx] {
                continue;
            }
            let layer = idx / per;
            let ix = (idx % per % cols) as i64;
            let iy = (idx % per / cols) as i64;
            let mut relax = |nidx: usize, step: f64, heap: &mut BinaryHeap<HeapItem>| {
                let c = cost + step;
                if c < dist[nidx] {
                    dist[nidx] = c;
                    parent[nidx] = idx;
                    heap.push(HeapItem { cost: c, idx: nidx });
                }
            };
            let at = |x: i64, y: i64| -> Option<usize> {
                (x >= 0 && y >= 0 && (x as usize) < cols && (y as usize) < rows)
                    .then(|| layer * per + y as usize * cols + x as usize)
                    .filter(|i| free(*i))
            };
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
                let Some(nidx) = at(ix + dx, iy + dy) else { continue };
                if dx != 0 && dy != 0 && (at(ix + dx, iy).is_none() || at(ix, iy + dy).is_none()) {
                    continue;
                }
                let step = if dx != 0 && dy != 0 { SQRT_2 * res } else { res };
                relax(nidx, step, &mut heap);
            }
            if vertical {
                for nl in [layer.wrapping_sub(1), layer + 1] {
                    if nl < map.layers.len() {
                        let nidx = nl * per + (idx % per);
                        if free(nidx) {
                            relax(nidx, map.layer_spacing, &mut heap);
                        }
                    }
                }
            }
        }
        Self {
            cols,
            rows,
            dist,
            parent,
        }
    }

    fn index(&self, node: Node) -> Option<usize> {
        let c = node.cell;
        (c.ix >= 0 && c.iy >= 0 && (c.ix as usize) < self.cols && (c.iy as usize) < self.rows)
            .then(|| node.layer * self.cols * self.rows + c.iy as usize * self.cols + c.ix as usize)
            .filter(|i| *i < self.dist.len())
    }

    pub fn distance(&self, node: Node) -> f64 {
        self.index(node).map_or(f64::INFINITY, |i| self.dist[i])
    }

    fn node_of(&self, idx: usize) -> Node {
        let per = self.cols * self.rows;
        Node {
            layer: idx / per,
            cell: GridIndex::new((idx % per % self.cols) as i64, (idx % per / self.cols) as i64),
        }
    }

    /// Nodes from `target` back to the nearest source.
    pub fn path_to_source(&self, target: Node) -> Option<Vec<Node>> {
        let mut idx = self.index(target)?;
        if !self.dist[idx].is_finite() {
            return None;
        }
        let mut out = vec![self.node_of(idx)];
        while self.parent[idx] != usize::MAX {
            idx = self.parent[idx];
            out.push(self.node_of(idx));
        }
        Some(out)
    }
}
