//! Spatial guiding anchors (frontier, target, inter-layer) and frame annotation.

use crate::frontier::FrontierCluster;
use crate::geometry::{fov_contains, wrap_angle, Camera, FovCap, Pose, Vec3};
use crate::occupancy::{Cell, LayerMap, MultiLayerMap};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorParams {
    pub phi_left_deg: f64,
    pub phi_right_deg: f64,
    pub m_nom: usize,
    pub m_max: usize,
    pub tau_obs: usize,
    pub r_clr: f64,
    /// Search range for target anchors, meters.
    pub target_range: f64,
}

impl Default for AnchorParams {
    fn default() -> Self {
        Self {
            phi_left_deg: 60.0,
            phi_right_deg: -60.0,
            m_nom: 3,
            m_max: 5,
            tau_obs: 2,
            r_clr: 0.6,
            target_range: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    Frontier,
    Target,
    InterLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub kind: AnchorKind,
    /// Dense from 1 within a frame.
    pub index: usize,
    pub position: [f64; 3],
    pub yaw_hint: f64,
    pub pixel: Option<[f64; 2]>,
    /// Projected frontier plane corners (frontier anchors only).
    pub polyline: Option<[[f64; 2]; 4]>,
    pub source_cluster: Option<usize>,
    pub layer: usize,
}

impl Anchor {
    pub fn pos(&self) -> Vec3 {
        Vec3::new(self.position[0], self.position[1], self.position[2])
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.pos(), self.yaw_hint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObservation {
    pub anchors: Vec<Anchor>,
    pub layer: usize,
    pub layer_map_snapshot: LayerMap,
    pub frame_width: u32,
    pub frame_height: u32,
    pub pose: Pose,
}

impl AnnotatedObservation {
    pub fn frontier_polylines(&self) -> Vec<[[f64; 2]; 4]> {
        self.anchors.iter().filter_map(|a| a.polyline).collect()
    }
}

/// Clusters whose whole frontier plane projects into the image and lies in
/// the viewing cap. Anchor indices are left at 0 for [`number_anchors`].
pub fn frontier_anchors(clusters: &[FrontierCluster], cam_pose: &Pose, camera: &Camera, cap: &FovCap) -> Vec<Anchor> {
    let k = &camera.intrinsics;
    clusters
        .iter()
        .filter_map(|c| {
            let corners = c.corners?;
            let viewpoint = c.viewpoint?;
            let mut poly = [[0.0; 2]; 4];
            for (slot, w) in poly.iter_mut().zip(corners.iter()) {
                let w = Vec3::new(w[0], w[1], w[2]);
                if !fov_contains(cam_pose, &w, cap) {
                    return None;
                }
                let px = camera.project_global(cam_pose, &w).ok()?;
                if !k.contains(px.u, px.v) {
                    return None;
                }
                *slot = [px.u, px.v];
            }
            let label = [
                poly.iter().map(|p| p[0]).sum::<f64>() / 4.0,
                poly.iter().map(|p| p[1]).sum::<f64>() / 4.0,
            ];
            Some(Anchor {
                kind: AnchorKind::Frontier,
                index: 0,
                position: viewpoint.position,
                yaw_hint: viewpoint.yaw,
                pixel: Some(label),
                polyline: Some(poly),
                source_cluster: Some(c.index),
                layer: c.layer,
            })
        })
        .collect()
}

/// Frontier clusters whose centroid lies inside the viewing cap.
pub fn observable_frontier_count(clusters: &[FrontierCluster], pose: &Pose, cap: &FovCap, layer_height: f64) -> usize {
    clusters
        .iter()
        .filter(|c| fov_contains(pose, &c.centroid3(layer_height), cap))
        .count()
}

pub fn adaptive_cardinality(n_obs: usize, tau_obs: usize, m_nom: usize, m_max: usize) -> usize {
    if n_obs < tau_obs {
        m_max
    } else {
        m_nom
    }
}

/// `phi_left - (l-1)/(m-1) * (phi_left - phi_right)` for `l = 1..=m`.
pub fn yaw_sample_set(phi_left: f64, phi_right: f64, m_phi: usize) -> Vec<f64> {
    assert!(m_phi >= 2, "need at least two yaw samples");
    let span = phi_left - phi_right;
    (1..=m_phi)
        .map(|l| phi_left - (l - 1) as f64 / (m_phi - 1) as f64 * span)
        .collect()
}

/// For each relative yaw, the farthest free, line-of-sight reachable cell
/// along the search ray that keeps `r_clr` clearance. Cells closer than
/// `r_clr` to the pose are not candidates.
pub fn target_anchors(
    layer: &LayerMap,
    layer_idx: usize,
    pose: &Pose,
    yaws: &[f64],
    r_clr: f64,
    d_max: f64,
) -> Vec<Anchor> {
    let Ok(origin) = layer.cell_at(&pose.pos()) else {
        return Vec::new();
    };
    yaws.iter()
        .filter_map(|phi| {
            let theta = wrap_angle(pose.yaw + phi);
            let mut best = None;
            for cell in layer.ray_within(origin, theta, d_max).skip(1) {
                if layer.get(cell) != Cell::Free {
                    break;
                }
                let [x, y] = layer.center(cell);
                let far_enough = (x - pose.position[0]).hypot(y - pose.position[1]) >= r_clr - 1e-9;
                if far_enough && layer.has_clearance(cell, r_clr) {
                    best = Some(cell);
                }
            }
            best.map(|cell| Anchor {
                kind: AnchorKind::Target,
                index: 0,
                position: layer.center3(cell).into(),
                yaw_hint: theta,
                pixel: None,
                polyline: None,
                source_cluster: None,
                layer: layer_idx,
            })
        })
        .collect()
}

/// Up then down anchors at the current XY when both layers are free within
/// `r_clr` of the column.
pub fn inter_layer_anchors(map: &MultiLayerMap, pose: &Pose, r_clr: f64) -> Vec<Anchor> {
    let Some(cur) = map.layer_index(pose.position[2]) else {
        return Vec::new();
    };
    let here = &map.layers[cur];
    let Ok(cell) = here.cell_at(&pose.pos()) else {
        return Vec::new();
    };
    if !here.has_clearance(cell, r_clr) {
        return Vec::new();
    }
    [cur + 1, cur.wrapping_sub(1)]
        .into_iter()
        .filter(|j| *j < map.layers.len())
        .filter(|j| map.layers[*j].has_clearance(cell, r_clr))
        .map(|j| Anchor {
            kind: AnchorKind::InterLayer,
            index: 0,
            position: [pose.position[0], pose.position[1], map.layers[j].height],
            yaw_hint: pose.yaw,
            pixel: None,
            polyline: None,
            source_cluster: None,
            layer: j,
        })
        .collect()
}

/// Assigns dense 1-based indices and image pixels where the anchor is in view.
pub fn number_anchors(anchors: &mut [Anchor], pose: &Pose, camera: &Camera) {
    let k = camera.intrinsics;
    for (i, a) in anchors.iter_mut().enumerate() {
        a.index = i + 1;
        match a.kind {
            AnchorKind::Frontier => {}
            AnchorKind::Target => {
                a.pixel = camera
                    .project_global(pose, &a.pos())
                    .ok()
                    .filter(|p| k.contains(p.u, p.v))
                    .map(|p| [p.u, p.v]);
            }
            AnchorKind::InterLayer => {
                // Drawn as a badge at the top or bottom edge of the frame.
                let up = a.position[2] > pose.position[2];
                let v = if up { 20.0 } else { k.height as f64 - 21.0 };
                a.pixel = Some([k.width as f64 / 2.0, v]);
            }
        }
    }
}

/// RGB8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

pub const BACKGROUND: [u8; 3] = [48, 48, 48];
pub const CYAN: [u8; 3] = [0, 255, 255];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const RED: [u8; 3] = [255, 0, 0];
pub const BLUE: [u8; 3] = [0, 64, 255];

const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b001, 0b001, 0b001],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

impl Raster {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let data = fill
            .iter()
            .copied()
            .cycle()
            .take((width * height * 3) as usize)
            .collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = ((y as u32 * self.width + x as u32) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn line(&mut self, a: [f64; 2], b: [f64; 2], c: [u8; 3]) {
        let (mut x0, mut y0) = (a[0].round() as i64, a[1].round() as i64);
        let (x1, y1) = (b[0].round() as i64, b[1].round() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn disc(&mut self, center: [f64; 2], radius: i64, c: [u8; 3]) {
        let (cx, cy) = (center[0].round() as i64, center[1].round() as i64);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy <= radius * radius {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }

    pub fn square(&mut self, center: [f64; 2], half: i64, c: [u8; 3]) {
        let (cx, cy) = (center[0].round() as i64, center[1].round() as i64);
        for dy in -half..=half {
            for dx in -half..=half {
                self.put(cx + dx, cy + dy, c);
            }
        }
    }

    /// Decimal label with a 3x5 font at scale 2, top-left at `at`.
    pub fn label(&mut self, at: [f64; 2], n: usize, c: [u8; 3]) {
        let (x0, y0) = (at[0].round() as i64, at[1].round() as i64);
        for (k, ch) in n.to_string().bytes().enumerate() {
            let glyph = DIGITS[(ch - b'0') as usize];
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) != 0 {
                        let px = x0 + k as i64 * 8 + col * 2;
                        let py = y0 + row as i64 * 2;
                        self.put(px, py, c);
                        self.put(px + 1, py, c);
                        self.put(px, py + 1, c);
                        self.put(px + 1, py + 1, c);
                    }
                }
            }
        }
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().expect("png header");
            w.write_image_data(&self.data).expect("png data");
        }
        out
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, String> {
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().map_err(|e| e.to_string())?;
        let mut buf = vec![0; reader.output_buffer_size().ok_or("png too large")?];
        let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err("expected RGB8".into());
        }
        buf.truncate(info.buffer_size());
        Ok(Self {
            width: info.width,
            height: info.height,
            data: buf,
        })
    }
}

/// Cyan frontier outlines, red target discs, blue inter-layer badges and
/// green index labels on a flat background.
pub fn annotate_frame(obs: &AnnotatedObservation) -> Raster {
    let mut img = Raster::new(obs.frame_width, obs.frame_height, BACKGROUND);
    for a in &obs.anchors {
        match a.kind {
            AnchorKind::Frontier => {
                if let Some(poly) = a.polyline {
                    for i in 0..4 {
                        img.line(poly[i], poly[(i + 1) % 4], CYAN);
                    }
                }
            }
            AnchorKind::Target => {
                if let Some(p) = a.pixel {
                    img.disc(p, 6, RED);
                }
            }
            AnchorKind::InterLayer => {
                if let Some(p) = a.pixel {
                    img.square(p, 6, BLUE);
                }
            }
        }
        if let Some(p) = a.pixel {
            img.label([p[0] + 9.0, p[1] - 5.0], a.index, GREEN);
        }
    }
    img
}
