//! Roadmap hypergraph, candidate validation and goal/yaw selection.

use crate::frontier::FrontierCluster;
use crate::geometry::{fov_contains, wrap_angle, FovCap, Pose, Vec3};
use crate::occupancy::{DistanceField, HitRule, LayerMap, MultiLayerMap, Node, OccupancyError};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoadmapError {
    #[error("hyperedge references unknown vertex {0}")]
    DanglingReference(usize),
    #[error("probability {0} must lie strictly inside (0, 1)")]
    DomainError(f64),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSpan {
    /// Rays span the candidate's cap around its yaw.
    #[default]
    Cap,
    Full360,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationParams {
    pub k: usize,
    pub alpha: f64,
    pub tau_g: f64,
    pub lambda: f64,
    pub tau_valid: f64,
    pub tau_yaw: f64,
    pub tau_dpsi_deg: f64,
    pub n_rays: usize,
    pub eps: f64,
    pub hit_rule: HitRule,
    pub span: GainSpan,
}

impl Default for ValidationParams {
    fn default() -> Self {
        Self {
            k: 5,
            alpha: 10.0,
            tau_g: 0.3,
            lambda: 1.0,
            tau_valid: 0.5,
            tau_yaw: 0.8,
            tau_dpsi_deg: 30.0,
            n_rays: 72,
            eps: 1e-3,
            hit_rule: HitRule::FirstInformative,
            span: GainSpan::Cap,
        }
    }
}

impl ValidationParams {
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.k > 0, "k must be positive"),
            (self.alpha > 0.0, "alpha must be positive"),
            ((0.0..=1.0).contains(&self.tau_g), "tau_g must lie in [0, 1]"),
            (self.lambda > 0.0, "lambda must be positive"),
            (
                self.tau_valid > 0.0 && self.tau_valid < 1.0,
                "tau_valid must lie in (0, 1)",
            ),
            (self.tau_yaw > 0.0 && self.tau_yaw < 1.0, "tau_yaw must lie in (0, 1)"),
            (self.tau_dpsi_deg >= 0.0, "tau_dpsi_deg must be non-negative"),
            (self.n_rays > 0, "n_rays must be positive"),
            (self.eps > 0.0 && self.eps < 0.5, "eps must lie in (0, 0.5)"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg.to_string()),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexSource {
    Start,
    Vlm,
    Geo,
    Switch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadmapVertex {
    pub id: usize,
    pub step: usize,
    pub pose: Pose,
    pub cap: FovCap,
    pub source: VertexSource,
    pub visited: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidates {
    pub vlm: Option<usize>,
    pub geo: usize,
    pub switch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub gain: f64,
    pub p_gain: f64,
    pub c_det: f64,
    pub p_valid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperEdge {
    pub step: usize,
    pub prev: usize,
    pub chosen: usize,
    pub candidates: Candidates,
    pub validation: Option<Validation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Roadmap {
    pub vertices: Vec<RoadmapVertex>,
    pub edges: Vec<HyperEdge>,
}

impl Roadmap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an unvisited vertex; ids follow creation order.
    pub fn add_vertex(&mut self, step: usize, pose: Pose, cap: FovCap, source: VertexSource) -> usize {
        let id = self.vertices.len();
        self.vertices.push(RoadmapVertex {
            id,
            step,
            pose,
            cap,
            source,
            visited: false,
        });
        id
    }

    /// Start vertex, visited at step 0.
    pub fn add_start(&mut self, pose: Pose, cap: FovCap) -> usize {
        let id = self.add_vertex(0, pose, cap, VertexSource::Start);
        self.vertices[id].visited = true;
        id
    }

    pub fn vertex(&self, id: usize) -> Option<&RoadmapVertex> {
        self.vertices.get(id)
    }

    pub fn vertex_mut(&mut self, id: usize) -> Option<&mut RoadmapVertex> {
        self.vertices.get_mut(id)
    }

    pub fn visited(&self) -> impl Iterator<Item = &RoadmapVertex> {
        self.vertices.iter().filter(|v| v.visited)
    }

    pub fn append_step(&mut self, edge: HyperEdge) -> Result<(), RoadmapError> {
        let ids = [
            Some(edge.prev),
            Some(edge.chosen),
            edge.candidates.vlm,
            Some(edge.candidates.geo),
            edge.candidates.switch,
        ];
        if let Some(bad) = ids.into_iter().flatten().find(|id| *id >= self.vertices.len()) {
            return Err(RoadmapError::DanglingReference(bad));
        }
        let v = &mut self.vertices[edge.chosen];
        v.visited = true;
        v.step = edge.step;
        self.edges.push(edge);
        Ok(())
    }
}

/// Up to `k` visited vertices nearest to `pos`; ties go to the lower id.
pub fn k_nearest_visited<'a>(graph: &'a Roadmap, pos: &Vec3, k: usize) -> Vec<&'a RoadmapVertex> {
    let mut v: Vec<(f64, &RoadmapVertex)> = graph.visited().map(|v| ((v.pose.pos() - pos).norm(), v)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    v.into_iter().take(k).map(|(_, v)| v).collect()
}

pub fn visibility_indicator(hit: [f64; 2], height: f64, neighbors: &[&RoadmapVertex]) -> bool {
    let p = Vec3::new(hit[0], hit[1], height);
    neighbors.iter().any(|v| fov_contains(&v.pose, &p, &v.cap))
}

/// Ray azimuths for the gain estimate.
pub fn gain_azimuths(yaw: f64, cap: &FovCap, m: usize, span: GainSpan) -> Vec<f64> {
    let full = span == GainSpan::Full360 || cap.half_angle >= PI;
    (0..m)
        .map(|i| {
            if full {
                yaw + 2.0 * PI * i as f64 / m as f64
            } else if m == 1 {
                yaw
            } else {
                yaw - cap.half_angle + 2.0 * cap.half_angle * i as f64 / (m - 1) as f64
            }
        })
        .collect()
}

/// Fraction of the candidate's hit points outside every neighbor's cap.
pub fn information_gain(
    candidate: &Pose,
    layer: &LayerMap,
    neighbors: &[&RoadmapVertex],
    cap: &FovCap,
    params: &ValidationParams,
) -> Result<f64, RoadmapError> {
    let origin = Vec3::new(candidate.position[0], candidate.position[1], layer.height);
    let thetas = gain_azimuths(candidate.yaw, cap, params.n_rays, params.span);
    let mut unseen = 0usize;
    for theta in &thetas {
        let hit = layer.cast_hit(&origin, *theta, cap.d_max, params.hit_rule)?;
        if !visibility_indicator(hit.point, layer.height, neighbors) {
            unseen += 1;
        }
    }
    Ok(unseen as f64 / thetas.len() as f64)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `(σ(x), σ(−x))`, each computed to full relative precision.
pub fn sigmoid_pair(x: f64) -> (f64, f64) {
    (sigmoid(x), sigmoid(-x))
}

/// Log-odds of a probability given with its complement.
pub fn logit_pair(p: f64, q: f64) -> f64 {
    p.ln() - q.ln()
}

pub fn gain_confidence(gain: f64, alpha: f64, tau_g: f64) -> f64 {
    sigmoid(alpha * (gain - tau_g))
}

/// Log-odds fusion of geometric gain evidence with detection confidence.
pub fn validate_candidate(p_gain: f64, c_det: f64, lambda: f64) -> Result<f64, RoadmapError> {
    for p in [p_gain, c_det] {
        if !(p > 0.0 && p < 1.0) {
            return Err(RoadmapError::DomainError(p));
        }
    }
    Ok(sigmoid(logit(p_gain) + lambda * logit(c_det)))
}

/// Full validation record for a policy-proposed candidate.
pub fn score_candidate(
    graph: &Roadmap,
    candidate: &Pose,
    layer: &LayerMap,
    cap: &FovCap,
    c_det: f64,
    params: &ValidationParams,
) -> Result<Validation, RoadmapError> {
    if !(c_det > 0.0 && c_det < 1.0) {
        return Err(RoadmapError::DomainError(c_det));
    }
    let neighbors = k_nearest_visited(graph, &candidate.pos(), params.k);
    let gain = information_gain(candidate, layer, &neighbors, cap, params)?;
    // fuse in log-odds directly; logit(P_G) is exactly alpha * (G - tau_G)
    let gain_odds = params.alpha * (gain - params.tau_g);
    let p_valid = sigmoid(gain_odds + params.lambda * logit(c_det));
    Ok(Validation {
        gain,
        p_gain: sigmoid(gain_odds),
        c_det,
        p_valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Vlm,
    Geo,
}

pub fn select_goal(vlm_present: bool, p_valid: f64, tau_valid: f64) -> Branch {
    if vlm_present && p_valid > tau_valid {
        Branch::Vlm
    } else {
        Branch::Geo
    }
}

pub fn select_yaw(c_det: f64, psi_traj: f64, psi_k: f64, tau_yaw: f64, tau_dpsi: f64) -> f64 {
    if c_det > tau_yaw && wrap_angle(psi_traj - psi_k).abs() > tau_dpsi {
        psi_k
    } else {
        psi_traj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoCandidate {
    pub pose: Pose,
    /// (layer, cluster index); `None` for the rotate-in-place fallback.
    pub cluster: Option<(usize, usize)>,
    pub gain: f64,
    pub distance: f64,
    pub score: f64,
}

/// Frontier viewpoint maximizing gain / (1 + geodesic distance), searched on
/// the current layer first and then on adjacent layers.
pub fn geometric_candidate(
    belief: &MultiLayerMap,
    clusters: &[FrontierCluster],
    pose: &Pose,
    graph: &Roadmap,
    cap: &FovCap,
    params: &ValidationParams,
    vertical: bool,
) -> Result<GeoCandidate, RoadmapError> {
    let current = belief.layer_index(pose.position[2]).unwrap_or(0);
    let here = belief.layers[current].cell_at(&pose.pos())?;
    let field = DistanceField::compute(
        belief,
        &[Node {
            layer: current,
            cell: here,
        }],
        vertical,
    );
    let mut tiers = vec![vec![current]];
    tiers.push(
        [current.wrapping_sub(1), current + 1]
            .into_iter()
            .filter(|l| *l < belief.layers.len())
            .collect(),
    );
    for tier in tiers {
        let mut best: Option<GeoCandidate> = None;
        let mut pool: Vec<&FrontierCluster> = clusters
            .iter()
            .filter(|c| tier.contains(&c.layer) && c.viewpoint.is_some())
            .collect();
        pool.sort_by_key(|c| (c.index, c.layer));
        for c in pool {
            let vp = c.viewpoint.expect("filtered");
            let layer = &belief.layers[c.layer];
            let neighbors = k_nearest_visited(graph, &vp.pos(), params.k);
            let gain = information_gain(&vp, layer, &neighbors, cap, params)?;
            let distance = layer
                .cell_at(&vp.pos())
                .map_or(f64::INFINITY, |cell| field.distance(Node { layer: c.layer, cell }));
            let score = if distance.is_finite() {
                gain / (1.0 + distance)
            } else {
                0.0
            };
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(GeoCandidate {
                    pose: vp,
                    cluster: Some((c.layer, c.index)),
                    gain,
                    distance,
                    score,
                });
            }
        }
        if let Some(b) = best {
            return Ok(b);
        }
    }
    Ok(GeoCandidate {
        pose: pose.with_yaw(pose.yaw + FRAC_PI_2),
        cluster: None,
        gain: 0.0,
        distance: 0.0,
        score: 0.0,
    })
}
