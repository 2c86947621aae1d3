//! Decision policies: anything that turns a prompt into a raw reply document.

use super::{Action, PromptPayload, VlmResponse};
use crate::anchors::{Anchor, AnnotatedObservation};
use crate::config::EngineParams;
use crate::geometry::{wrap_angle, Pose, Vec3};
use crate::occupancy::{Cell, DistanceField, GridIndex, MultiLayerMap, Node};
use crate::roadmap::select_yaw;
use crate::simulator::goal_visible;
use base64::Engine as _;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy unavailable: {0}")]
    PolicyUnavailable(String),
    #[error("scripted policy exhausted after {0} responses")]
    ScriptExhausted(usize),
    #[error("policy configuration: {0}")]
    Config(String),
}

/// What a policy sees at one decision step.
#[derive(Debug, Clone, Copy)]
pub struct PolicyRequest<'a> {
    pub payload: &'a PromptPayload,
    pub obs: &'a AnnotatedObservation,
    pub image_png: Option<&'a [u8]>,
    /// 0 for the first attempt of a step, 1 for the corrective retry.
    pub attempt: usize,
}

pub trait DecisionPolicy: Send {
    fn name(&self) -> &str;
    fn decide(&mut self, req: &PolicyRequest<'_>) -> Result<String, PolicyError>;
    /// Whether requests should carry the annotated frame.
    fn wants_image(&self) -> bool {
        false
    }
}

/// Episode facts available to policy factories.
#[derive(Debug, Clone)]
pub struct PolicyContext {
    pub world: MultiLayerMap,
    pub goal: Vec3,
    pub vertical: bool,
    pub seed: u64,
    pub params: EngineParams,
}

pub type PolicyFactory = fn(arg: Option<&str>, ctx: &PolicyContext) -> Result<Box<dyn DecisionPolicy>, PolicyError>;

/// Name-keyed policy constructors. Specs look like `mock`, `scripted:<path>`
/// or `remote:<url>`.
#[derive(Clone)]
pub struct PolicyRegistry {
    factories: BTreeMap<String, PolicyFactory>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("mock", |_, ctx| Ok(Box::new(MockOracle::new(ctx))));
        r.register("scripted", |arg, _| {
            let path = arg.ok_or_else(|| PolicyError::Config("scripted policy needs a file path".into()))?;
            Ok(Box::new(ScriptedPolicy::from_file(Path::new(path))?))
        });
        r.register("remote", |arg, ctx| {
            let url = arg.ok_or_else(|| PolicyError::Config("remote policy needs a URL".into()))?;
            let p = &ctx.params.policy;
            Ok(Box::new(RemotePolicy::new(
                url,
                Duration::from_secs_f64(p.remote_timeout_s),
                p.remote_retries,
            )))
        });
        r
    }
}

impl PolicyRegistry {
    pub fn register(&mut self, name: &str, factory: PolicyFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, spec: &str, ctx: &PolicyContext) -> Result<Box<dyn DecisionPolicy>, PolicyError> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        let f = self.factories.get(name).ok_or_else(|| {
            PolicyError::Config(format!("unknown policy `{name}` (known: {})", self.names().join(", ")))
        })?;
        f(arg, ctx)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Ground-truth-aware stand-in for a vision-language model.
///
/// Plans over the world eroded by the anchor clearance, so its distances agree
/// with where anchors can exist. Confidence is a logistic of the route
/// improvement an anchor offers.
pub struct MockOracle {
    world: MultiLayerMap,
    field: DistanceField,
    goal: Vec3,
    params: EngineParams,
    /// Minimum goal-distance improvement for an anchor to be worth selecting.
    pub min_gain: f64,
    /// Lookahead along the optimal path used for yaw requests.
    pub lookahead: f64,
    /// Route improvement, in meters, that moves the confidence logit by one.
    pub confidence_scale: f64,
}

fn eroded(world: &MultiLayerMap, r_clr: f64) -> MultiLayerMap {
    let mut out = world.clone();
    for l in &mut out.layers {
        let mask = l.clearance_mask(r_clr);
        for (cell, keep) in l.cells.iter_mut().zip(mask) {
            if !keep {
                *cell = Cell::Occupied;
            }
        }
    }
    out
}

impl MockOracle {
    pub fn new(ctx: &PolicyContext) -> Self {
        let world = eroded(&ctx.world, ctx.params.anchors.r_clr);
        let field = DistanceField::compute(&world, &goal_sources(&world, &ctx.goal), ctx.vertical);
        Self {
            world: ctx.world.clone(),
            field,
            goal: ctx.goal,
            params: ctx.params,
            min_gain: 0.05,
            lookahead: 3.0,
            confidence_scale: 0.25,
        }
    }

    fn node_near(&self, p: &Vec3) -> Option<Node> {
        let layer = self.world.layer_index(p[2])?;
        let l = &self.world.layers[layer];
        let c = l.cell_of(p[0], p[1]);
        let centre = Node { layer, cell: c };
        if self.field.distance(centre).is_finite() {
            return Some(centre);
        }
        // poses can sit just inside the eroded margin
        let mut best: Option<(f64, Node)> = None;
        for dy in -2..=2 {
            for dx in -2..=2 {
                let n = Node {
                    layer,
                    cell: GridIndex::new(c.ix + dx, c.iy + dy),
                };
                let d = self.field.distance(n);
                if d.is_finite() && best.is_none_or(|(b, _)| d < b) {
                    best = Some((d, n));
                }
            }
        }
        best.map(|(_, n)| n)
    }

    /// Geodesic distance to the goal region from near `p`, infinite if unreachable.
    pub fn goal_distance(&self, p: &Vec3) -> f64 {
        self.node_near(p).map_or(f64::INFINITY, |n| self.field.distance(n))
    }

    /// Like [`goal_distance`](Self::goal_distance) but only from the cell containing `p`.
    fn anchor_distance(&self, p: &Vec3) -> f64 {
        let Some(layer) = self.world.layer_index(p[2]) else {
            return f64::INFINITY;
        };
        let cell = self.world.layers[layer].cell_of(p[0], p[1]);
        self.field.distance(Node { layer, cell })
    }

    fn confidence(&self, improvement: f64) -> f64 {
        sigmoid(improvement / self.confidence_scale).clamp(0.001, 0.999)
    }

    fn in_range(&self, p: &Vec3) -> bool {
        (p - self.goal).norm() <= self.params.motion.success_radius
    }

    /// Whether the straight move toward `a`, holding the yaw the engine would
    /// hold, passes a point within the success radius that sees the goal.
    fn finishes(&self, from: &Pose, a: &Anchor, confidence: f64) -> bool {
        let Ok(cap) = self.params.fov_cap() else {
            return false;
        };
        let (p0, p1) = (from.pos(), a.pos());
        let (dx, dy) = (p1[0] - p0[0], p1[1] - p0[1]);
        let heading = if dx.hypot(dy) > 1e-9 { dy.atan2(dx) } else { from.yaw };
        let v = &self.params.validation;
        let yaw = select_yaw(confidence, heading, from.yaw, v.tau_yaw, v.tau_dpsi_deg.to_radians());
        let n = ((p1 - p0).norm() / self.params.motion.step).ceil().max(1.0) as usize;
        (1..=n).any(|i| {
            let p = p0 + (p1 - p0) * (i as f64 / n as f64);
            self.in_range(&p) && goal_visible(&Pose::new(p, yaw), &self.goal, &self.world, &cap)
        })
    }

    pub fn respond(&self, obs: &AnnotatedObservation) -> VlmResponse {
        let here = obs.pose.pos();
        if self.in_range(&here) {
            let (dx, dy) = (self.goal[0] - here[0], self.goal[1] - here[1]);
            let delta = wrap_angle(dy.atan2(dx) - obs.pose.yaw);
            if delta.abs() > 1e-6 {
                return VlmResponse {
                    interpretation: "the goal is close; turning to face it".into(),
                    action: Action::AdjustYaw { delta },
                    confidence: 0.9,
                };
            }
        }
        let d_now = self.goal_distance(&here);
        // (finishes, remaining distance, progress, anchor slot)
        let mut best: Option<(bool, f64, f64, usize)> = None;
        for (i, a) in obs.anchors.iter().enumerate() {
            let d = self.anchor_distance(&a.pos());
            if !d.is_finite() {
                continue;
            }
            let improvement = if d_now.is_finite() { d_now - d } else { f64::INFINITY };
            if improvement <= self.min_gain {
                continue;
            }
            // reaching the goal on the way is worth the whole remaining route
            let done = self.finishes(&obs.pose, a, self.confidence(d_now));
            let progress = if done { d_now } else { improvement };
            if best.is_none_or(|(bd, bdist, _, _)| (done && !bd) || (done == bd && d < bdist)) {
                best = Some((done, d, progress, i));
            }
        }
        if let Some((_, _, progress, i)) = best {
            return VlmResponse {
                interpretation: format!(
                    "anchor {} shortens the route to the goal by {:.2} m",
                    i + 1,
                    progress.min(1e3)
                ),
                action: Action::SelectAnchor {
                    index: obs.anchors[i].index,
                },
                confidence: self.confidence(progress),
            };
        }
        let delta = self.yaw_toward_path(&here).map(|y| wrap_angle(y - obs.pose.yaw));
        let delta = match delta {
            Some(d) if d.abs() >= 10f64.to_radians() => d,
            _ => FRAC_PI_2,
        };
        VlmResponse {
            interpretation: "no anchor improves the route; turning to look along it".into(),
            action: Action::AdjustYaw { delta },
            confidence: 0.5,
        }
    }

    fn yaw_toward_path(&self, here: &Vec3) -> Option<f64> {
        let start = self.node_near(here)?;
        let path = self.field.path_to_source(start)?;
        let l = &self.world.layers[start.layer];
        let target = path
            .iter()
            .take_while(|n| n.layer == start.layer)
            .map(|n| l.center(n.cell))
            .find(|c| (c[0] - here[0]).hypot(c[1] - here[1]) >= self.lookahead)
            .or_else(|| {
                path.iter()
                    .take_while(|n| n.layer == start.layer)
                    .last()
                    .map(|n| l.center(n.cell))
            })?;
        let (dx, dy) = (target[0] - here[0], target[1] - here[1]);
        (dx.hypot(dy) > 1e-9).then(|| dy.atan2(dx))
    }
}

/// Free cells of the goal's layer within 1 m of the goal (widened until non-empty).
fn goal_sources(world: &MultiLayerMap, goal: &Vec3) -> Vec<Node> {
    let Some(layer) = world.layer_index(goal[2]) else {
        return Vec::new();
    };
    let l = &world.layers[layer];
    let mut radius = 1.0;
    while radius <= 8.0 {
        let s: Vec<Node> = l
            .indices()
            .filter(|c| l.get(*c) == Cell::Free)
            .filter(|c| {
                let p = l.center(*c);
                (p[0] - goal[0]).hypot(p[1] - goal[1]) <= radius
            })
            .map(|cell| Node { layer, cell })
            .collect();
        if !s.is_empty() {
            return s;
        }
        radius *= 2.0;
    }
    Vec::new()
}

impl DecisionPolicy for MockOracle {
    fn name(&self) -> &str {
        "mock"
    }

    fn decide(&mut self, req: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        Ok(self.respond(req.obs).to_document())
    }
}

/// Replays recorded reply documents in order.
pub struct ScriptedPolicy {
    responses: Vec<String>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(responses: Vec<String>) -> Self {
        Self { responses, next: 0 }
    }

    /// Accepts a JSON array of reply strings, or an episode log whose step
    /// records carry a `responses` array.
    pub fn from_file(path: &Path) -> Result<Self, PolicyError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PolicyError::Config(format!("{}: {e}", path.display())))?;
        if let Ok(list) = serde_json::from_str::<Vec<String>>(&text) {
            return Ok(Self::new(list));
        }
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Value = serde_json::from_str(line)
                .map_err(|e| PolicyError::Config(format!("{} line {}: {e}", path.display(), i + 1)))?;
            if let Some(rs) = v.get("responses").and_then(Value::as_array) {
                out.extend(rs.iter().filter_map(Value::as_str).map(str::to_string));
            }
        }
        Ok(Self::new(out))
    }
}

impl DecisionPolicy for ScriptedPolicy {
    fn name(&self) -> &str {
        "scripted"
    }

    fn decide(&mut self, _req: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        let r = self
            .responses
            .get(self.next)
            .cloned()
            .ok_or(PolicyError::ScriptExhausted(self.responses.len()))?;
        self.next += 1;
        Ok(r)
    }
}

/// Posts the prompt to an HTTP endpoint and returns the body of the reply.
pub struct RemotePolicy {
    url: String,
    agent: ureq::Agent,
    retries: usize,
}

impl RemotePolicy {
    pub fn new(url: &str, timeout: Duration, retries: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.to_string(),
            agent,
            retries,
        }
    }

    pub fn request_body(req: &PolicyRequest<'_>) -> Value {
        let mut body = json!({"prompt": req.payload.text, "anchors": req.payload.anchors});
        if let Some(png) = req.image_png {
            body["image_png_base64"] = Value::String(base64::engine::general_purpose::STANDARD.encode(png));
        }
        body
    }
}

impl DecisionPolicy for RemotePolicy {
    fn name(&self) -> &str {
        "remote"
    }

    fn wants_image(&self) -> bool {
        true
    }

    fn decide(&mut self, req: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        let body = Self::request_body(req).to_string();
        let mut last = String::new();
        for _ in 0..=self.retries {
            let attempt = self
                .agent
                .post(&self.url)
                .header("Content-Type", "application/json")
                .send(body.as_str())
                .and_then(|resp| resp.into_body().read_to_string());
            match attempt {
                Ok(text) => return Ok(text),
                Err(e) => last = e.to_string(),
            }
        }
        Err(PolicyError::PolicyUnavailable(format!(
            "{} after {} attempts: {last}",
            self.url,
            self.retries + 1
        )))
    }
}
