//! Episode loop, JSON-lines log with a digest chain, and replay.

use super::{
    goal_visible, move_to, sense, AgentState, MotionResult, MotionStatus, MoveHooks, Scenario, ScenarioFile, SimError,
};
use crate::anchors::{
    adaptive_cardinality, annotate_frame, frontier_anchors, inter_layer_anchors, number_anchors,
    observable_frontier_count, target_anchors, yaw_sample_set, Anchor, AnchorKind, AnnotatedObservation,
};
use crate::config::EngineParams;
use crate::frontier::{extract_frontiers, FrontierCluster};
use crate::geometry::Pose;
use crate::metrics::EpisodeOutcome;
use crate::prompting::{
    build_prompt, clip_confidence, correction_instruction, parse_response_with, Action, DecisionPolicy, PolicyError,
    PolicyRequest, PromptPayload, PromptTemplate, ScriptedPolicy,
};
use crate::roadmap::{
    geometric_candidate, score_candidate, select_goal, select_yaw, Branch, Candidates, GeoCandidate, HyperEdge,
    Roadmap, Validation, VertexSource,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep a PNG of every annotated frame.
    pub render_frames: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub version: u32,
    pub scenario: ScenarioFile,
    pub params: EngineParams,
    pub policy: String,
    pub seed: u64,
    pub start: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Policy-selected target or frontier anchor, accepted by validation.
    Vlm,
    /// Policy-selected inter-layer anchor, accepted by validation.
    Switch,
    Geo,
    Yaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub pose_before: Pose,
    pub anchors: Vec<Anchor>,
    pub responses: Vec<String>,
    pub parse_errors: Vec<String>,
    pub action: Option<Action>,
    /// Clipped detection confidence.
    pub confidence: Option<f64>,
    pub geo: GeoCandidate,
    pub validation: Option<Validation>,
    pub decision: Decision,
    pub chosen_vertex: usize,
    pub target: Pose,
    pub motion: MotionResult,
    pub pose_after: Pose,
    pub prompts_used: usize,
    pub path_length: f64,
    pub goal_visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Success,
    BudgetExhausted,
    PolicyUnavailable,
    ScriptExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailerRecord {
    pub termination: Termination,
    pub outcome: EpisodeOutcome,
    pub goal_visible: bool,
    pub detail: Option<String>,
    /// Replies received during a step that was cut short by a policy failure.
    pub responses: Vec<String>,
    pub graph: Roadmap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header(HeaderRecord),
    Step(StepRecord),
    Trailer(TrailerRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<LogRecord>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn chain(prev: &str, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(b"\n");
    h.update(body.as_bytes());
    hex(&h.finalize())
}

/// Canonical text of a record: sorted keys, shortest round-trip floats.
fn canonical(v: &Value) -> String {
    serde_json::to_string(v).expect("json values serialize")
}

impl EpisodeLog {
    pub fn header(&self) -> Option<&HeaderRecord> {
        match self.records.first() {
            Some(LogRecord::Header(h)) => Some(h),
            _ => None,
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn trailer(&self) -> Option<&TrailerRecord> {
        match self.records.last() {
            Some(LogRecord::Trailer(t)) => Some(t),
            _ => None,
        }
    }

    /// One JSON object per line; each carries `digest` = sha256(previous digest, record).
    pub fn to_jsonl(&self) -> String {
        let mut prev = String::new();
        let mut out = String::new();
        for r in &self.records {
            let mut v = serde_json::to_value(r).expect("records serialize");
            let d = chain(&prev, &canonical(&v));
            v["digest"] = Value::String(d.clone());
            out.push_str(&canonical(&v));
            out.push('\n');
            prev = d;
        }
        out
    }
}

/// Parses a log without checking digests.
pub fn read_log(text: &str) -> Result<EpisodeLog, SimError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut v: Value = serde_json::from_str(line).map_err(|e| SimError::BadLog(format!("line {}: {e}", i + 1)))?;
        if let Value::Object(m) = &mut v {
            m.remove("digest");
        }
        records.push(serde_json::from_value(v).map_err(|e| SimError::BadLog(format!("line {}: {e}", i + 1)))?);
    }
    Ok(EpisodeLog { records })
}

pub struct EpisodeRun {
    pub log: EpisodeLog,
    /// PNG per prompting step when frames are rendered.
    pub frames: Vec<Vec<u8>>,
}

/// What the agent is shown at a step, plus the clusters behind its frontier anchors.
pub struct Observation {
    pub obs: AnnotatedObservation,
    pub clusters: Vec<FrontierCluster>,
}

/// Builds the numbered anchor set for the agent's current belief and pose.
pub fn observe(state: &AgentState, params: &EngineParams, vertical: bool) -> Result<Observation, SimError> {
    let belief = &state.belief;
    let cur = belief
        .layer_index(state.pose.position[2])
        .ok_or_else(|| SimError::BadLog("agent left the layer stack".into()))?;
    let layers: Vec<usize> = if vertical {
        (0..belief.layers.len()).collect()
    } else {
        vec![cur]
    };
    let clusters: Vec<FrontierCluster> = layers
        .iter()
        .flat_map(|li| extract_frontiers(&belief.layers[*li], *li, belief.layer_spacing, &params.frontier))
        .collect();
    let here: Vec<FrontierCluster> = clusters.iter().filter(|c| c.layer == cur).cloned().collect();
    let camera = params.camera_model()?;
    let cap = params.fov_cap()?;
    let layer = &belief.layers[cur];
    let ap = &params.anchors;
    let mut anchors = frontier_anchors(&here, &state.pose, &camera, &cap);
    let n_obs = observable_frontier_count(&here, &state.pose, &cap, layer.height);
    let m = adaptive_cardinality(n_obs, ap.tau_obs, ap.m_nom, ap.m_max);
    let yaws = yaw_sample_set(ap.phi_left_deg.to_radians(), ap.phi_right_deg.to_radians(), m);
    anchors.extend(target_anchors(
        layer,
        cur,
        &state.pose,
        &yaws,
        ap.r_clr,
        ap.target_range,
    ));
    if vertical {
        anchors.extend(inter_layer_anchors(belief, &state.pose, ap.r_clr));
    }
    number_anchors(&mut anchors, &state.pose, &camera);
    Ok(Observation {
        obs: AnnotatedObservation {
            anchors,
            layer: cur,
            layer_map_snapshot: layer.clone(),
            frame_width: camera.intrinsics.width,
            frame_height: camera.intrinsics.height,
            pose: state.pose,
        },
        clusters,
    })
}

fn outcome(
    scenario: &Scenario,
    seed: u64,
    state: &AgentState,
    success: bool,
    prompts: usize,
    observed: bool,
) -> EpisodeOutcome {
    EpisodeOutcome {
        scenario: scenario.file.name.clone(),
        seed,
        success,
        dtg: (state.pose.pos() - scenario.goal).norm(),
        path_length: state.path_length,
        optimal_path_length: scenario.file.optimal_path_length,
        prompts,
        goal_observed: observed,
    }
}

/// Runs one episode to success, budget exhaustion or policy failure.
pub fn run_episode(
    scenario: &Scenario,
    seed: u64,
    params: &EngineParams,
    policy: &mut dyn DecisionPolicy,
    policy_label: &str,
    options: &RunOptions,
) -> Result<EpisodeRun, SimError> {
    params.validate()?;
    let vertical = scenario.vertical();
    let world = &scenario.world;
    let cap = params.fov_cap()?;
    let vp = &params.validation;
    let mut template = PromptTemplate::default();
    if let Some(ig) = &scenario.file.important_guidelines {
        template.important_guidelines = ig.clone();
    }
    let start = scenario.start_for_seed(seed);
    let mut records = vec![LogRecord::Header(HeaderRecord {
        version: LOG_VERSION,
        scenario: scenario.file.clone(),
        params: *params,
        policy: policy_label.to_string(),
        seed,
        start,
    })];
    let mut frames = Vec::new();
    let mut state = AgentState {
        pose: start,
        belief: world.blank_like(),
        path_length: 0.0,
    };
    sense(&mut state, world, params, vertical)?;
    let mut graph = Roadmap::new();
    let mut current = graph.add_start(start, cap);
    let mut prompts_used = 0;
    let mut observed = false;
    let (termination, detail, pending) = loop {
        let visible = goal_visible(&state.pose, &scenario.goal, world, &cap);
        observed |= visible;
        if visible && (state.pose.pos() - scenario.goal).norm() <= params.motion.success_radius {
            break (Termination::Success, None, Vec::new());
        }
        if prompts_used >= scenario.file.horizon {
            break (Termination::BudgetExhausted, None, Vec::new());
        }
        prompts_used += 1;
        let k = prompts_used;
        let Observation { obs, clusters } = observe(&state, params, vertical)?;
        let payload = build_prompt(&scenario.file.goal_description, &obs, &template);
        let image = (options.render_frames || policy.wants_image()).then(|| annotate_frame(&obs).to_png());
        if options.render_frames {
            frames.push(image.clone().expect("rendered above"));
        }

        let mut responses = Vec::new();
        let mut parse_errors = Vec::new();
        let mut parsed = None;
        let mut failure = None;
        for attempt in 0..2 {
            let retry;
            let used: &PromptPayload = match parse_errors.last() {
                Some((_, e)) if attempt > 0 => {
                    retry = PromptPayload {
                        text: format!("{}{}", payload.text, correction_instruction(e)),
                        anchors: payload.anchors.clone(),
                    };
                    &retry
                }
                _ => &payload,
            };
            let req = PolicyRequest {
                payload: used,
                obs: &obs,
                image_png: image.as_deref(),
                attempt,
            };
            match policy.decide(&req) {
                Ok(raw) => {
                    let r = parse_response_with(&raw, obs.anchors.len(), vp.eps);
                    responses.push(raw);
                    match r {
                        Ok(r) => {
                            parsed = Some(r);
                            break;
                        }
                        Err(e) => parse_errors.push((e.to_string(), e)),
                    }
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failure {
            let t = match e {
                PolicyError::PolicyUnavailable(_) => Termination::PolicyUnavailable,
                PolicyError::ScriptExhausted(_) => Termination::ScriptExhausted,
                other => return Err(other.into()),
            };
            break (t, Some(e.to_string()), responses);
        }

        let pose_before = state.pose;
        let geo = geometric_candidate(&state.belief, &clusters, &state.pose, &graph, &cap, vp, vertical)?;
        let v_geo = graph.add_vertex(k, geo.pose, cap, VertexSource::Geo);
        let mut candidates = Candidates {
            vlm: None,
            geo: v_geo,
            switch: None,
        };
        let mut validation = None;
        let mut c_det = None;
        let (decision, chosen, target) = match parsed.as_ref().map(|r| (r.action, r.confidence)) {
            Some((Action::SelectAnchor { index }, conf)) => {
                let a = &obs.anchors[index - 1];
                let c = clip_confidence(conf, vp.eps);
                c_det = Some(c);
                let switch = a.kind == AnchorKind::InterLayer;
                let cand = a.pose();
                let source = if switch {
                    VertexSource::Switch
                } else {
                    VertexSource::Vlm
                };
                let v = graph.add_vertex(k, cand, cap, source);
                if switch {
                    candidates.switch = Some(v);
                } else {
                    candidates.vlm = Some(v);
                }
                let val = score_candidate(&graph, &cand, &state.belief.layers[a.layer], &cap, c, vp)?;
                validation = Some(val);
                match select_goal(true, val.p_valid, vp.tau_valid) {
                    Branch::Vlm if switch => (Decision::Switch, v, cand),
                    Branch::Vlm => (Decision::Vlm, v, cand),
                    Branch::Geo => (Decision::Geo, v_geo, geo.pose),
                }
            }
            Some((Action::AdjustYaw { delta }, conf)) => {
                c_det = Some(clip_confidence(conf, vp.eps));
                let p = state.pose.with_yaw(state.pose.yaw + delta);
                let v = graph.add_vertex(k, p, cap, VertexSource::Vlm);
                candidates.vlm = Some(v);
                (Decision::Yaw, v, p)
            }
            None => (Decision::Geo, v_geo, geo.pose),
        };

        let psi_k = state.pose.yaw;
        let tau_dpsi = vp.tau_dpsi_deg.to_radians();
        let held = |heading: f64| match (decision, c_det) {
            (Decision::Vlm | Decision::Switch, Some(c)) => select_yaw(c, heading, psi_k, vp.tau_yaw, tau_dpsi),
            _ => heading,
        };
        let radius = params.motion.success_radius;
        let reached =
            |p: &Pose| (p.pos() - scenario.goal).norm() <= radius && goal_visible(p, &scenario.goal, world, &cap);
        let hooks = MoveHooks {
            yaw: Some(&held),
            stop: Some(&reached),
        };
        let motion = move_to(&mut state, world, &target.pos(), params, vertical, hooks)?;
        let final_yaw = match (decision, motion.status) {
            (_, MotionStatus::Stopped) => state.pose.yaw,
            (Decision::Vlm | Decision::Switch, _) => held(motion.terminal_heading),
            (Decision::Geo, MotionStatus::Blocked) => motion.terminal_heading,
            (Decision::Geo | Decision::Yaw, _) => target.yaw,
        };
        state.pose = state.pose.with_yaw(final_yaw);
        sense(&mut state, world, params, vertical)?;
        graph.vertex_mut(chosen).expect("chosen vertex exists").pose = state.pose;
        graph.append_step(HyperEdge {
            step: k,
            prev: current,
            chosen,
            candidates,
            validation,
        })?;
        current = chosen;
        let visible = goal_visible(&state.pose, &scenario.goal, world, &cap);
        observed |= visible;
        records.push(LogRecord::Step(StepRecord {
            step: k,
            pose_before,
            anchors: obs.anchors,
            responses,
            parse_errors: parse_errors.into_iter().map(|(s, _)| s).collect(),
            action: parsed.as_ref().map(|r| r.action),
            confidence: c_det,
            geo,
            validation,
            decision,
            chosen_vertex: chosen,
            target,
            motion,
            pose_after: state.pose,
            prompts_used,
            path_length: state.path_length,
            goal_visible: visible,
        }));
    };
    let success = termination == Termination::Success;
    records.push(LogRecord::Trailer(TrailerRecord {
        termination,
        outcome: outcome(scenario, seed, &state, success, prompts_used, observed),
        goal_visible: goal_visible(&state.pose, &scenario.goal, world, &cap),
        detail,
        responses: pending,
        graph,
    }));
    Ok(EpisodeRun {
        log: EpisodeLog { records },
        frames,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// 0-based record index (0 is the header).
    pub record: usize,
    pub reason: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.record {
            0 => write!(f, "header: {}", self.reason),
            i => write!(f, "record {i}: {}", self.reason),
        }
    }
}

/// Re-runs a logged episode over its recorded replies and reports the first
/// record whose content or digest differs. Frames are rendered when asked.
pub fn replay_log(bytes: &[u8], options: &RunOptions) -> Result<(Option<Divergence>, EpisodeRun), SimError> {
    let lines: Vec<&[u8]> = bytes
        .split(|b| *b == b'\n')
        .filter(|l| !l.iter().all(u8::is_ascii_whitespace))
        .collect();
    let first = lines.first().ok_or_else(|| SimError::BadLog("empty log".into()))?;
    let header_value: Value = serde_json::from_slice(first).map_err(|e| SimError::BadLog(format!("header: {e}")))?;
    let header: HeaderRecord = match serde_json::from_value::<LogRecord>(strip_digest(header_value.clone())) {
        Ok(LogRecord::Header(h)) => h,
        Ok(_) => return Err(SimError::BadLog("first record is not a header".into())),
        Err(e) => return Err(SimError::BadLog(format!("header: {e}"))),
    };
    let mut parsed: Vec<Result<Value, String>> = vec![Ok(header_value)];
    let mut responses = Vec::new();
    for l in &lines[1..] {
        let v = serde_json::from_slice::<Value>(l).map_err(|e| e.to_string());
        if let Ok(v) = &v {
            if let Some(rs) = v.get("responses").and_then(Value::as_array) {
                responses.extend(rs.iter().filter_map(Value::as_str).map(str::to_string));
            }
        }
        parsed.push(v);
    }
    let scenario = Scenario::compile(header.scenario.clone())?;
    let mut policy = ScriptedPolicy::new(responses);
    let run = run_episode(
        &scenario,
        header.seed,
        &header.params,
        &mut policy,
        &header.policy,
        options,
    )?;
    let fresh: Vec<Value> = run
        .log
        .to_jsonl()
        .lines()
        .map(|l| serde_json::from_str(l).expect("own output parses"))
        .collect();

    let mut prev = String::new();
    for (i, rec) in parsed.iter().enumerate() {
        let rec = match rec {
            Ok(v) => v,
            Err(e) => {
                return Ok((
                    Some(Divergence {
                        record: i,
                        reason: format!("unreadable record: {e}"),
                    }),
                    run,
                ))
            }
        };
        let stored = rec
            .get("digest")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let body = strip_digest(rec.clone());
        let recomputed = chain(&prev, &canonical(&body));
        let Some(f) = fresh.get(i) else {
            return Ok((
                Some(Divergence {
                    record: i,
                    reason: "replay ended before this record".into(),
                }),
                run,
            ));
        };
        if strip_digest(f.clone()) != body {
            return Ok((
                Some(Divergence {
                    record: i,
                    reason: "replayed state differs from the recorded one".into(),
                }),
                run,
            ));
        }
        if stored != recomputed {
            return Ok((
                Some(Divergence {
                    record: i,
                    reason: "record content does not match its digest".into(),
                }),
                run,
            ));
        }
        prev = stored;
    }
    if fresh.len() != parsed.len() {
        return Ok((
            Some(Divergence {
                record: parsed.len(),
                reason: format!("replay produced {} records, log has {}", fresh.len(), parsed.len()),
            }),
            run,
        ));
    }
    Ok((None, run))
}

fn strip_digest(mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.remove("digest");
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{MockOracle, PolicyContext};
    use crate::simulator::{Mode, StartSpec};

    fn corridor() -> Scenario {
        // 16 m x 4 m hall with a pillar; the goal sits 12 m ahead of the start
        let rows: Vec<String> = (0..20)
            .map(|r| {
                (0..80)
                    .map(|c| {
                        let border = r == 0 || r == 19 || c == 0 || c == 79;
                        let pillar = (38..42).contains(&c) && (8..12).contains(&r);
                        if border || pillar {
                            '#'
                        } else {
                            '.'
                        }
                    })
                    .collect()
            })
            .collect();
        Scenario::compile(ScenarioFile {
            name: "hall".into(),
            mode: Mode::TwoPointFiveD,
            resolution: 0.2,
            layer_spacing: 1.5,
            base_height: 1.0,
            layers: vec![rows],
            start: StartSpec {
                x: 1.5,
                y: 2.1,
                z: 1.0,
                yaw_deg: 0.0,
            },
            goal: [13.5, 2.1, 1.0],
            goal_description: "the red crate at the end of the hall".into(),
            optimal_path_length: 12.0,
            horizon: 5,
            seed: 1,
            start_yaw_jitter_deg: 0.0,
            important_guidelines: None,
        })
        .unwrap()
    }

    fn mock(s: &Scenario) -> MockOracle {
        MockOracle::new(&PolicyContext {
            world: s.world.clone(),
            goal: s.goal,
            vertical: s.vertical(),
            seed: 0,
            params: EngineParams::default(),
        })
    }

    #[test]
    fn mock_reaches_goal_and_replays_clean() {
        let s = corridor();
        let p = EngineParams::default();
        let run = run_episode(&s, 1, &p, &mut mock(&s), "mock", &RunOptions::default()).unwrap();
        let t = run.log.trailer().unwrap();
        assert_eq!(
            t.termination,
            Termination::Success,
            "{:#?}",
            run.log.steps().collect::<Vec<_>>()
        );
        assert!(t.outcome.dtg <= 3.0 && t.goal_visible);
        let text = run.log.to_jsonl();
        let (div, _) = replay_log(text.as_bytes(), &RunOptions::default()).unwrap();
        assert_eq!(div, None);
        assert_eq!(read_log(&text).unwrap(), run.log);
    }

    #[test]
    fn immediate_success_uses_no_prompts() {
        let mut s = corridor();
        s.file.goal = [3.5, 2.1, 1.0];
        let s = Scenario::compile(s.file).unwrap();
        let mut policy = ScriptedPolicy::new(vec![]);
        let run = run_episode(
            &s,
            1,
            &EngineParams::default(),
            &mut policy,
            "scripted",
            &RunOptions::default(),
        )
        .unwrap();
        let t = run.log.trailer().unwrap();
        assert_eq!((t.termination, t.outcome.prompts), (Termination::Success, 0));
    }

    #[test]
    fn budget_is_enforced_exactly() {
        let s = corridor();
        let yaw = r#"{"interpretation":"look","action":{"type":"yaw","delta_yaw_deg":90},"confidence":0.5}"#;
        for horizon in [5, 15, 9] {
            let mut f = s.file.clone();
            f.horizon = horizon;
            let s = Scenario::compile(f).unwrap();
            let mut policy = ScriptedPolicy::new(vec![yaw.to_string(); 20]);
            let run = run_episode(
                &s,
                1,
                &EngineParams::default(),
                &mut policy,
                "scripted",
                &RunOptions::default(),
            )
            .unwrap();
            let t = run.log.trailer().unwrap();
            assert_eq!(t.termination, Termination::BudgetExhausted);
            assert_eq!(t.outcome.prompts, horizon);
            assert_eq!(run.log.steps().count(), horizon);
        }
    }

    #[test]
    fn parse_failure_retries_once_then_falls_back() {
        let s = corridor();
        let mut policy = ScriptedPolicy::new(vec!["garbage".into(), "{}".into()]);
        let mut f = s.file.clone();
        f.horizon = 1;
        let s = Scenario::compile(f).unwrap();
        let run = run_episode(
            &s,
            1,
            &EngineParams::default(),
            &mut policy,
            "scripted",
            &RunOptions::default(),
        )
        .unwrap();
        let step = run.log.steps().next().unwrap();
        assert_eq!(step.responses.len(), 2);
        assert_eq!(step.parse_errors.len(), 2);
        assert_eq!(step.decision, Decision::Geo);
        assert_eq!(step.prompts_used, 1);
    }

    #[test]
    fn exhausted_script_ends_episode() {
        let s = corridor();
        let mut policy = ScriptedPolicy::new(vec![]);
        let run = run_episode(
            &s,
            1,
            &EngineParams::default(),
            &mut policy,
            "scripted",
            &RunOptions::default(),
        )
        .unwrap();
        let t = run.log.trailer().unwrap();
        assert_eq!(t.termination, Termination::ScriptExhausted);
        assert!(!t.outcome.success);
    }

    #[test]
    fn tampered_response_diverges() {
        let s = corridor();
        let run = run_episode(
            &s,
            1,
            &EngineParams::default(),
            &mut mock(&s),
            "mock",
            &RunOptions::default(),
        )
        .unwrap();
        let text = run.log.to_jsonl();
        // flip one character inside the first recorded interpretation
        let at = text.find("\"interpretation\\\":\\\"").expect("a recorded response") + 22;
        let mut bytes = text.into_bytes();
        bytes[at] = if bytes[at] == b'x' { b'y' } else { b'x' };
        let (div, _) = replay_log(&bytes, &RunOptions::default()).unwrap();
        assert_eq!(div.expect("divergence").record, 1);
    }

    #[test]
    fn tampered_parameter_diverges() {
        let s = corridor();
        let run = run_episode(
            &s,
            1,
            &EngineParams::default(),
            &mut mock(&s),
            "mock",
            &RunOptions::default(),
        )
        .unwrap();
        let text = run.log.to_jsonl().replacen("\"alpha\":10.0", "\"alpha\":12.0", 1);
        let (div, _) = replay_log(text.as_bytes(), &RunOptions::default()).unwrap();
        assert_eq!(div.expect("divergence").record, 0);
    }

    #[test]
    fn same_inputs_same_bytes() {
        let s = corridor();
        let a = run_episode(
            &s,
            3,
            &EngineParams::default(),
            &mut mock(&s),
            "mock",
            &RunOptions::default(),
        )
        .unwrap();
        let b = run_episode(
            &s,
            3,
            &EngineParams::default(),
            &mut mock(&s),
            "mock",
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
    }
}
