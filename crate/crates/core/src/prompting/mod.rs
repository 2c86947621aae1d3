//! Context-based prompt construction and strict parsing of policy replies.
//!
//! A prompt is the ordered concatenation of five sections: role and goal,
//! observation input, important guidelines, behavior options and output
//! schema. The reply is a single JSON object:
//!
//! ```json
//! {"interpretation": "...", "action": {"type": "anchor", "index": 2}, "confidence": 0.8}
//! {"interpretation": "...", "action": {"type": "yaw", "delta_yaw_deg": -30}, "confidence": 0.4}
//! ```

pub mod policy;

use crate::anchors::{AnchorKind, AnnotatedObservation};
use crate::geometry::{wrap_angle, Pose};
use crate::occupancy::{Cell, GridIndex, LayerMap};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

pub use policy::{
    DecisionPolicy, MockOracle, PolicyContext, PolicyError, PolicyRegistry, PolicyRequest, RemotePolicy, ScriptedPolicy,
};

pub const DEFAULT_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplate {
    pub role_goal: String,
    pub observation_input: String,
    pub important_guidelines: String,
    pub behavior_options: String,
    pub output_schema: Value,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            role_goal: "You are the navigation planner of a small aerial robot flying indoors. \
                        Your mission is to reach the described goal and keep it in view."
                .into(),
            observation_input: "You receive the forward camera frame annotated with numbered anchors \
                                and the 2D occupancy map of the current flight layer. Cyan outlines \
                                mark frontier planes at the edge of explored space, red discs mark \
                                reachable target points, blue badges mark safe transitions to the \
                                layer above or below. The anchor table gives each anchor's global \
                                position, distance and bearing relative to the robot heading. In the \
                                map, '@' is the robot, '#' occupied, '.' free and '?' unknown."
                .into(),
            important_guidelines: "Prefer anchors that bring the goal closer or into view. Use frontier \
                                   anchors to explore unknown space when the goal is not visible. Use \
                                   inter-layer anchors only when the goal is likely on another level."
                .into(),
            behavior_options: "Either select exactly one anchor by its index, or request a yaw \
                               adjustment in degrees (positive turns left, magnitude at most 180)."
                .into(),
            output_schema: default_output_schema(),
        }
    }
}

pub fn default_output_schema() -> Value {
    json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["interpretation", "action", "confidence"],
        "properties": {
            "interpretation": {"type": "string"},
            "action": {
                "oneOf": [
                    {
                        "type": "object",
                        "additionalProperties": false,
                        "required": ["type", "index"],
                        "properties": {"type": {"const": "anchor"}, "index": {"type": "integer", "minimum": 1}}
                    },
                    {
                        "type": "object",
                        "additionalProperties": false,
                        "required": ["type", "delta_yaw_deg"],
                        "properties": {"type": {"const": "yaw"}, "delta_yaw_deg": {"type": "number", "minimum": -180, "maximum": 180}}
                    }
                ]
            },
            "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
        }
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("prompt section {0} is empty")]
    EmptySection(&'static str),
    #[error("output schema must describe exactly the anchor and yaw actions")]
    BadSchema,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), TemplateError> {
        for (name, text) in [
            ("role_goal", &self.role_goal),
            ("observation_input", &self.observation_input),
            ("important_guidelines", &self.important_guidelines),
            ("behavior_options", &self.behavior_options),
        ] {
            if text.trim().is_empty() {
                return Err(TemplateError::EmptySection(name));
            }
        }
        let forms = self.output_schema["properties"]["action"]["oneOf"]
            .as_array()
            .ok_or(TemplateError::BadSchema)?;
        let mut consts: Vec<&str> = forms
            .iter()
            .filter_map(|f| f["properties"]["type"]["const"].as_str())
            .collect();
        consts.sort_unstable();
        if consts != ["anchor", "yaw"] {
            return Err(TemplateError::BadSchema);
        }
        Ok(())
    }
}

/// Anchor row shared by the prompt text and the remote wire request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSummary {
    pub index: usize,
    pub kind: AnchorKind,
    pub position: [f64; 3],
    pub layer: usize,
    pub distance_m: f64,
    pub bearing_deg: f64,
    pub pixel: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub text: String,
    pub anchors: Vec<AnchorSummary>,
}

fn r2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn summarize_anchors(obs: &AnnotatedObservation) -> Vec<AnchorSummary> {
    let p = obs.pose.pos();
    obs.anchors
        .iter()
        .map(|a| {
            let d = a.pos() - p;
            let bearing = if d.x.hypot(d.y) < 1e-9 {
                0.0
            } else {
                wrap_angle(d.y.atan2(d.x) - obs.pose.yaw).to_degrees()
            };
            AnchorSummary {
                index: a.index,
                kind: a.kind,
                position: [r2(a.position[0]), r2(a.position[1]), r2(a.position[2])],
                layer: a.layer,
                distance_m: r2(d.norm()),
                bearing_deg: r2(bearing),
                pixel: a.pixel.map(|px| [px[0].round(), px[1].round()]),
            }
        })
        .collect()
}

/// Coarse text rendering of a layer, top row is the largest y.
pub fn ascii_map(layer: &LayerMap, agent: &Pose, max_cols: usize) -> String {
    let block = layer.cols.div_ceil(max_cols).max(1);
    let agent_cell = layer.cell_of(agent.position[0], agent.position[1]);
    let bx = layer.cols.div_ceil(block);
    let by = layer.rows.div_ceil(block);
    let mut out = String::new();
    for ry in (0..by).rev() {
        for rx in 0..bx {
            let (x0, y0) = ((rx * block) as i64, (ry * block) as i64);
            let (x1, y1) = (
                ((rx + 1) * block).min(layer.cols) as i64,
                ((ry + 1) * block).min(layer.rows) as i64,
            );
            let ch = if (x0..x1).contains(&agent_cell.ix) && (y0..y1).contains(&agent_cell.iy) {
                '@'
            } else {
                let mut occ = false;
                let mut free = false;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        match layer.get(GridIndex::new(ix, iy)) {
                            Cell::Occupied => occ = true,
                            Cell::Free => free = true,
                            Cell::Unknown => {}
                        }
                    }
                }
                if occ {
                    '#'
                } else if free {
                    '.'
                } else {
                    '?'
                }
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

pub fn build_prompt(task_description: &str, obs: &AnnotatedObservation, template: &PromptTemplate) -> PromptPayload {
    let anchors = summarize_anchors(obs);
    let layer = &obs.layer_map_snapshot;
    let mut t = String::new();
    let _ = writeln!(
        t,
        "# Role and Goal\n{}\nTask: {}\n",
        template.role_goal, task_description
    );
    let _ = writeln!(t, "# Observation Input\n{}", template.observation_input);
    let _ = writeln!(
        t,
        "Robot pose: x={:.2} y={:.2} z={:.2} yaw={:.1}deg (layer {})",
        obs.pose.position[0],
        obs.pose.position[1],
        obs.pose.position[2],
        obs.pose.yaw.to_degrees(),
        obs.layer
    );
    let _ = writeln!(t, "Frame: {}x{} pixels", obs.frame_width, obs.frame_height);
    if anchors.is_empty() {
        let _ = writeln!(t, "Anchors: [] (no anchors in this frame)");
    } else {
        let _ = writeln!(t, "Anchors ({}):", anchors.len());
        for a in &anchors {
            let _ = writeln!(t, "{}", serde_json::to_string(a).expect("anchor summary serializes"));
        }
    }
    let _ = writeln!(
        t,
        "Layer map: height {:.2} m, {}x{} cells at {:.2} m, free={} occupied={} unknown={}",
        layer.height,
        layer.cols,
        layer.rows,
        layer.resolution,
        layer.count(Cell::Free),
        layer.count(Cell::Occupied),
        layer.count(Cell::Unknown)
    );
    t.push_str(&ascii_map(layer, &obs.pose, 50));
    let _ = writeln!(t, "\n# Important Guidelines\n{}\n", template.important_guidelines);
    let _ = writeln!(t, "# Behavior Options\n{}", template.behavior_options);
    if anchors.is_empty() {
        let _ = writeln!(
            t,
            "No anchors are available in this frame; only a yaw adjustment is possible.\n"
        );
    } else {
        let _ = writeln!(t, "Valid anchor indices: 1..{}.\n", anchors.len());
    }
    let _ = writeln!(
        t,
        "# Output Schema\nReply with exactly one JSON object, no other text:\n{}",
        serde_json::to_string_pretty(&template.output_schema).expect("schema serializes")
    );
    PromptPayload { text: t, anchors }
}

pub fn correction_instruction(err: &ParseError) -> String {
    format!(
        "\n# Correction\nYour previous reply was rejected ({err}). Reply again with exactly one JSON object that follows the Output Schema.\n"
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    SelectAnchor {
        index: usize,
    },
    /// Radians, positive turns left.
    AdjustYaw {
        delta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmResponse {
    pub interpretation: String,
    pub action: Action,
    /// Clipped to `[eps, 1 - eps]`.
    pub confidence: f64,
}

impl VlmResponse {
    /// Output-schema document for this response.
    pub fn to_document(&self) -> String {
        let action = match self.action {
            Action::SelectAnchor { index } => json!({"type": "anchor", "index": index}),
            Action::AdjustYaw { delta } => json!({"type": "yaw", "delta_yaw_deg": delta.to_degrees()}),
        };
        json!({"interpretation": self.interpretation, "action": action, "confidence": self.confidence}).to_string()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("anchor index {index} outside 1..={n_anchors}")]
    IndexOutOfRange { index: i64, n_anchors: usize },
    #[error("confidence {0} outside (0, 1)")]
    ConfidenceOutOfRange(f64),
}

pub fn clip_confidence(c: f64, eps: f64) -> f64 {
    c.max(eps).min(1.0 - eps)
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], what: &str) -> Result<(), ParseError> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(ParseError::SchemaViolation(format!("unexpected field `{k}` in {what}")));
        }
    }
    for k in allowed {
        if !obj.contains_key(*k) {
            return Err(ParseError::SchemaViolation(format!("missing field `{k}` in {what}")));
        }
    }
    Ok(())
}

pub fn parse_response(raw: &str, n_anchors: usize) -> Result<VlmResponse, ParseError> {
    parse_response_with(raw, n_anchors, DEFAULT_EPS)
}

pub fn parse_response_with(raw: &str, n_anchors: usize, eps: f64) -> Result<VlmResponse, ParseError> {
    let value: Value = serde_json::from_str(raw.trim()).map_err(|e| ParseError::MalformedDocument(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ParseError::MalformedDocument("top level is not an object".into()));
    };
    check_keys(&obj, &["interpretation", "action", "confidence"], "response")?;
    let interpretation = obj["interpretation"]
        .as_str()
        .ok_or_else(|| ParseError::SchemaViolation("interpretation must be a string".into()))?
        .to_string();
    let Value::Object(action) = &obj["action"] else {
        return Err(ParseError::SchemaViolation("action must be an object".into()));
    };
    let action = match action.get("type").and_then(Value::as_str) {
        Some("anchor") => {
            check_keys(action, &["type", "index"], "anchor action")?;
            let index = action["index"]
                .as_i64()
                .ok_or_else(|| ParseError::SchemaViolation("index must be an integer".into()))?;
            if index < 1 || index as u64 > n_anchors as u64 {
                return Err(ParseError::IndexOutOfRange { index, n_anchors });
            }
            Action::SelectAnchor { index: index as usize }
        }
        Some("yaw") => {
            check_keys(action, &["type", "delta_yaw_deg"], "yaw action")?;
            let deg = action["delta_yaw_deg"]
                .as_f64()
                .ok_or_else(|| ParseError::SchemaViolation("delta_yaw_deg must be a number".into()))?;
            let delta = deg.to_radians();
            if !(delta.abs() <= PI + 1e-12) {
                return Err(ParseError::SchemaViolation(format!("delta_yaw_deg {deg} exceeds 180")));
            }
            Action::AdjustYaw {
                delta: delta.clamp(-PI, PI),
            }
        }
        _ => {
            return Err(ParseError::SchemaViolation(
                "action.type must be \"anchor\" or \"yaw\"".into(),
            ))
        }
    };
    let c = obj["confidence"]
        .as_f64()
        .ok_or_else(|| ParseError::SchemaViolation("confidence must be a number".into()))?;
    if !(c > 0.0 && c < 1.0) {
        return Err(ParseError::ConfidenceOutOfRange(c));
    }
    Ok(VlmResponse {
        interpretation,
        action,
        confidence: clip_confidence(c, eps),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::Anchor;
    use proptest::prelude::*;

    fn obs(n: usize) -> AnnotatedObservation {
        let mut layer = LayerMap::new(1.0, 0.2, [0.0, 0.0], 30, 20);
        for iy in 5..15 {
            for ix in 5..25 {
                layer.set(GridIndex::new(ix, iy), Cell::Free).unwrap();
            }
        }
        layer.set(GridIndex::new(20, 10), Cell::Occupied).unwrap();
        let anchors = (0..n)
            .map(|i| Anchor {
                kind: AnchorKind::Target,
                index: i + 1,
                position: [2.0 + i as f64, 2.0, 1.0],
                yaw_hint: 0.0,
                pixel: Some([100.0 * i as f64, 240.0]),
                polyline: None,
                source_cluster: None,
                layer: 0,
            })
            .collect();
        AnnotatedObservation {
            anchors,
            layer: 0,
            layer_map_snapshot: layer,
            frame_width: 640,
            frame_height: 480,
            pose: Pose::new(crate::geometry::Vec3::new(1.5, 2.0, 1.0), 0.0),
        }
    }

    #[test]
    fn prompt_is_deterministic_and_ordered() {
        let t = PromptTemplate::default();
        t.validate().unwrap();
        let a = build_prompt("Find the red chair.", &obs(3), &t);
        let b = build_prompt("Find the red chair.", &obs(3), &t);
        assert_eq!(a, b);
        let pos: Vec<usize> = [
            "# Role and Goal",
            "# Observation Input",
            "# Important Guidelines",
            "# Behavior Options",
            "# Output Schema",
        ]
        .iter()
        .map(|h| a.text.find(h).unwrap())
        .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(a.text.contains("Valid anchor indices: 1..3."));
        assert_eq!(a.anchors.len(), 3);
    }

    #[test]
    fn empty_anchor_prompt_still_offers_yaw() {
        let p = build_prompt("Find the door.", &obs(0), &PromptTemplate::default());
        assert!(p.text.contains("Anchors: []"));
        assert!(p.text.contains("only a yaw adjustment is possible"));
        assert!(p.text.contains("\"yaw\""));
    }

    #[test]
    fn template_validation() {
        let mut t = PromptTemplate::default();
        t.important_guidelines = "  ".into();
        assert_eq!(t.validate(), Err(TemplateError::EmptySection("important_guidelines")));
        let mut t = PromptTemplate::default();
        t.output_schema = json!({"type": "object"});
        assert_eq!(t.validate(), Err(TemplateError::BadSchema));
    }

    #[test]
    fn parse_examples() {
        let r = parse_response(
            r#"{"interpretation":"door ahead","action":{"type":"anchor","index":2},"confidence":0.7}"#,
            3,
        )
        .unwrap();
        assert_eq!(r.action, Action::SelectAnchor { index: 2 });
        assert_eq!(r.confidence, 0.7);
        assert_eq!(
            parse_response(
                r#"{"interpretation":"","action":{"type":"anchor","index":7},"confidence":0.7}"#,
                3
            ),
            Err(ParseError::IndexOutOfRange { index: 7, n_anchors: 3 })
        );
        let r = parse_response(
            r#"{"interpretation":"turn","action":{"type":"yaw","delta_yaw_deg":30},"confidence":0.4}"#,
            0,
        )
        .unwrap();
        match r.action {
            Action::AdjustYaw { delta } => assert!((delta - 0.5236).abs() < 1e-4),
            other => panic!("{other:?}"),
        }
        assert_eq!(r.confidence, 0.4);
    }

    #[test]
    fn parse_error_kinds() {
        let cases = [
            ("not json", "malformed"),
            ("[1, 2]", "malformed"),
            (
                r#"{"interpretation":"x","action":{"type":"anchor","index":1}}"#,
                "schema",
            ),
            (
                r#"{"interpretation":"x","action":{"type":"anchor","index":1},"confidence":0.5,"extra":1}"#,
                "schema",
            ),
            (
                r#"{"interpretation":"x","action":{"type":"anchor","index":1,"delta_yaw_deg":3},"confidence":0.5}"#,
                "schema",
            ),
            (
                r#"{"interpretation":"x","action":{"type":"fly"},"confidence":0.5}"#,
                "schema",
            ),
            (
                r#"{"interpretation":"x","action":{"type":"yaw","delta_yaw_deg":270},"confidence":0.5}"#,
                "schema",
            ),
            (
                r#"{"interpretation":"x","action":{"type":"anchor","index":1.5},"confidence":0.5}"#,
                "schema",
            ),
            (
                r#"{"interpretation":"x","action":{"type":"anchor","index":0},"confidence":0.5}"#,
                "index",
            ),
            (
                r#"{"interpretation":"x","action":{"type":"anchor","index":1},"confidence":1.0}"#,
                "confidence",
            ),
            (
                r#"{"interpretation":"x","action":{"type":"anchor","index":1},"confidence":-0.2}"#,
                "confidence",
            ),
        ];
        for (raw, kind) in cases {
            let e = parse_response(raw, 2).unwrap_err();
            let got = match e {
                ParseError::MalformedDocument(_) => "malformed",
                ParseError::SchemaViolation(_) => "schema",
                ParseError::IndexOutOfRange { .. } => "index",
                ParseError::ConfidenceOutOfRange(_) => "confidence",
            };
            assert_eq!(got, kind, "{raw}");
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_confidence(0.5, 1e-3), 0.5);
        assert_eq!(clip_confidence(1.0, 1e-3), 0.999);
        assert_eq!(clip_confidence(-0.2, 1e-3), 0.001);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent_and_monotone(a in -2.0..2.0f64, b in -2.0..2.0f64, eps in 1e-6..0.49f64) {
            let ca = clip_confidence(a, eps);
            prop_assert_eq!(clip_confidence(ca, eps), ca);
            if a <= b {
                prop_assert!(ca <= clip_confidence(b, eps));
            }
        }

        #[test]
        fn serialize_then_parse_is_identity(
            text in "[ -~]{0,40}", anchor in proptest::bool::ANY, idx in 1usize..10,
            deg in -180.0..180.0f64, c in 0.001..0.999f64,
        ) {
            let action = if anchor { Action::SelectAnchor { index: idx } } else { Action::AdjustYaw { delta: deg.to_radians() } };
            let r = VlmResponse { interpretation: text, action, confidence: c };
            let back = parse_response(&r.to_document(), 10).unwrap();
            prop_assert_eq!(&back.interpretation, &r.interpretation);
            prop_assert_eq!(back.confidence, r.confidence);
            match (back.action, r.action) {
                (Action::SelectAnchor { index: a }, Action::SelectAnchor { index: b }) => prop_assert_eq!(a, b),
                (Action::AdjustYaw { delta: a }, Action::AdjustYaw { delta: b }) => prop_assert!((a - b).abs() < 1e-12),
                _ => prop_assert!(false, "action kind changed"),
            }
        }
    }
}
