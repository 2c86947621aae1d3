//! Frontier detection, clustering, principal-axis splitting and frontier planes.

use crate::geometry::{yaw_from, Pose, Vec3};
use crate::occupancy::{Cell, GridIndex, LayerMap};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontierParams {
    /// Longest allowed frontier segment, meters.
    pub l_max: f64,
    /// Clearance required around a cluster viewpoint, meters.
    pub r_clr: f64,
    /// Search radius around the centroid for a viewpoint, meters.
    pub viewpoint_radius: f64,
}

impl Default for FrontierParams {
    fn default() -> Self {
        Self {
            l_max: 3.0,
            r_clr: 0.6,
            viewpoint_radius: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierCluster {
    pub index: usize,
    pub layer: usize,
    pub cells: Vec<GridIndex>,
    pub centroid: [f64; 2],
    /// Unit principal axis.
    pub axis: [f64; 2],
    pub length: f64,
    /// Unit normal pointing toward the free side.
    pub normal: [f64; 2],
    pub corners: Option<[[f64; 3]; 4]>,
    pub viewpoint: Option<Pose>,
}

fn is_frontier(layer: &LayerMap, c: GridIndex) -> bool {
    layer.get(c) == Cell::Free
        && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
            let n = GridIndex::new(c.ix + dx, c.iy + dy);
            layer.in_bounds(n) && layer.get(n) == Cell::Unknown
        })
}

/// Unit eigenvector of the larger eigenvalue of a symmetric 2x2 matrix
/// `[[a, b], [b, c]]`, canonical sign, `+X` when degenerate.
pub fn principal_axis(a: f64, b: f64, c: f64) -> [f64; 2] {
    let half = (a - c) / 2.0;
    let disc = half.hypot(b);
    let scale = a.abs().max(c.abs()).max(1e-12);
    let v = if disc <= 1e-12 * scale {
        [1.0, 0.0]
    } else if b.abs() <= 1e-12 * scale {
        if a >= c {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    } else {
        let l1 = (a + c) / 2.0 + disc;
        let (x, y) = (l1 - c, b);
        let n = x.hypot(y);
        [x / n, y / n]
    };
    if v[0] < -1e-12 || (v[0].abs() <= 1e-12 && v[1] < 0.0) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

impl FrontierCluster {
    /// Shape statistics for a nonempty cell set.
    pub fn from_cells(layer: &LayerMap, layer_idx: usize, mut cells: Vec<GridIndex>) -> Self {
        assert!(!cells.is_empty(), "cluster needs at least one cell");
        cells.sort_by_key(|c| (c.iy, c.ix));
        let pts: Vec<[f64; 2]> = cells.iter().map(|c| layer.center(*c)).collect();
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in &pts {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let axis = principal_axis(sxx / n, sxy / n, syy / n);
        let proj = |p: &[f64; 2]| (p[0] - cx) * axis[0] + (p[1] - cy) * axis[1];
        let lo = pts.iter().map(proj).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(proj).fold(f64::NEG_INFINITY, f64::max);
        let length = (hi - lo).max(0.0);

        let perp = [-axis[1], axis[0]];
        let mut side = 0.0;
        for c in &cells {
            for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let nb = GridIndex::new(c.ix + dx, c.iy + dy);
                if !layer.in_bounds(nb) {
                    continue;
                }
                let d = dx as f64 * perp[0] + dy as f64 * perp[1];
                match layer.get(nb) {
                    Cell::Unknown => side -= d,
                    Cell::Free => side += d,
                    Cell::Occupied => {}
                }
            }
        }
        let normal = if side < 0.0 { [-perp[0], -perp[1]] } else { perp };
        Self {
            index: 0,
            layer: layer_idx,
            cells,
            centroid: [cx, cy],
            axis,
            length,
            normal,
            corners: None,
            viewpoint: None,
        }
    }

    pub fn centroid3(&self, z: f64) -> Vec3 {
        Vec3::new(self.centroid[0], self.centroid[1], z)
    }
}

/// Free cells with an unknown 4-neighbor, grouped into 8-connected
/// components in row-major discovery order.
pub fn detect_frontiers(layer: &LayerMap, layer_idx: usize) -> Vec<FrontierCluster> {
    let mut mark = vec![false; layer.cols * layer.rows];
    let flat = |c: GridIndex| c.iy as usize * layer.cols + c.ix as usize;
    let mut out = Vec::new();
    for start in layer.indices() {
        if mark[flat(start)] || !is_frontier(layer, start) {
            continue;
        }
        mark[flat(start)] = true;
        let mut queue = VecDeque::from([start]);
        let mut cells = Vec::new();
        while let Some(c) = queue.pop_front() {
            cells.push(c);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let n = GridIndex::new(c.ix + dx, c.iy + dy);
                    if (dx, dy) != (0, 0) && layer.in_bounds(n) && !mark[flat(n)] && is_frontier(layer, n) {
                        mark[flat(n)] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        out.push(FrontierCluster::from_cells(layer, layer_idx, cells));
    }
    for (i, c) in out.iter_mut().enumerate() {
        c.index = i;
    }
    out
}

/// Partitions a cluster into `ceil(length / l_max)` equal-width bins along its
/// axis, recursing on bins whose recomputed length still exceeds the limit.
pub fn split_cluster(layer: &LayerMap, c: &FrontierCluster, l_max: f64) -> Vec<FrontierCluster> {
    assert!(l_max > 0.0, "l_max must be positive");
    if c.length <= l_max || c.cells.len() < 2 {
        return vec![c.clone()];
    }
    let bins = (c.length / l_max - 1e-9).ceil().max(1.0) as usize;
    let width = c.length / bins as f64;
    let proj = |g: &GridIndex| {
        let p = layer.center(*g);
        (p[0] - c.centroid[0]) * c.axis[0] + (p[1] - c.centroid[1]) * c.axis[1]
    };
    let lo = c.cells.iter().map(proj).fold(f64::INFINITY, f64::min);
    let mut parts: Vec<Vec<GridIndex>> = vec![Vec::new(); bins];
    for g in &c.cells {
        let b = (((proj(g) - lo) / width + 1e-9).floor() as usize).min(bins - 1);
        parts[b].push(*g);
    }
    let parts: Vec<_> = parts.into_iter().filter(|p| !p.is_empty()).collect();
    if parts.len() == 1 {
        return vec![c.clone()];
    }
    parts
        .into_iter()
        .flat_map(|cells| {
            let sub = FrontierCluster::from_cells(layer, c.layer, cells);
            if sub.length > l_max + layer.resolution {
                split_cluster(layer, &sub, l_max)
            } else {
                vec![sub]
            }
        })
        .collect()
}

/// Four corners of the vertical frontier plane, counterclockwise as seen
/// from the free side: lower-left, lower-right, upper-right, upper-left.
pub fn cluster_corners(c: &FrontierCluster, layer_height: f64, layer_spacing: f64) -> [[f64; 3]; 4] {
    // Viewer looks along -normal; its right-hand direction is (-n_y, n_x).
    let right = [-c.normal[1], c.normal[0]];
    let h = c.length / 2.0;
    let left_pt = [c.centroid[0] - h * right[0], c.centroid[1] - h * right[1]];
    let right_pt = [c.centroid[0] + h * right[0], c.centroid[1] + h * right[1]];
    let lo = layer_height - layer_spacing / 2.0;
    let hi = layer_height + layer_spacing / 2.0;
    [
        [left_pt[0], left_pt[1], lo],
        [right_pt[0], right_pt[1], lo],
        [right_pt[0], right_pt[1], hi],
        [left_pt[0], left_pt[1], hi],
    ]
}

/// Nearest clear free cell to the centroid, preferring the free side, facing
/// the cluster.
pub fn cluster_viewpoint(
    layer: &LayerMap,
    c: &FrontierCluster,
    clear: &[bool],
    params: &FrontierParams,
) -> Option<Pose> {
    let center = layer.cell_of(c.centroid[0], c.centroid[1]);
    let n = (params.viewpoint_radius / layer.resolution).ceil() as i64;
    let mut best: Option<(bool, f64, GridIndex)> = None;
    for iy in center.iy - n..=center.iy + n {
        for ix in center.ix - n..=center.ix + n {
            let g = GridIndex::new(ix, iy);
            if !layer.in_bounds(g) || !clear[iy as usize * layer.cols + ix as usize] {
                continue;
            }
            let p = layer.center(g);
            let (dx, dy) = (p[0] - c.centroid[0], p[1] - c.centroid[1]);
            let d = dx.hypot(dy);
            if d > params.viewpoint_radius {
                continue;
            }
            let back_side = dx * c.normal[0] + dy * c.normal[1] < 0.0;
            let key = (back_side, d, g);
            let better = match &best {
                None => true,
                Some((bs, bd, bg)) => (key.0, key.1, (g.iy, g.ix)) < (*bs, *bd, (bg.iy, bg.ix)),
            };
            if better {
                best = Some(key);
            }
        }
    }
    let (_, _, g) = best?;
    let from = layer.center3(g);
    let yaw = yaw_from(&from, &c.centroid3(layer.height)).unwrap_or_else(|_| (-c.normal[1]).atan2(-c.normal[0]));
    Some(Pose::new(from, yaw))
}

/// Detect, split, and attach planes and viewpoints; indices are dense from 0.
pub fn extract_frontiers(
    layer: &LayerMap,
    layer_idx: usize,
    layer_spacing: f64,
    params: &FrontierParams,
) -> Vec<FrontierCluster> {
    let raw = detect_frontiers(layer, layer_idx);
    if raw.is_empty() {
        return raw;
    }
    let clear = layer.clearance_mask(params.r_clr);
    let mut out: Vec<FrontierCluster> = raw.iter().flat_map(|c| split_cluster(layer, c, params.l_max)).collect();
    for (i, c) in out.iter_mut().enumerate() {
        c.index = i;
        c.corners = Some(cluster_corners(c, layer.height, layer_spacing));
        c.viewpoint = cluster_viewpoint(layer, c, &clear, params);
    }
    out
}
