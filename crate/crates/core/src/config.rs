//! Engine parameters with layered overrides: defaults, then a JSON config
//! document, then `path.to.key=value` assignments.

use crate::anchors::AnchorParams;
use crate::frontier::FrontierParams;
use crate::geometry::{Camera, FovCap, Intrinsics, RigidTransform, Vec3};
use crate::metrics::MetricParams;
use crate::roadmap::ValidationParams;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("override `{0}` must look like key.path=value")]
    BadAssignment(String),
    #[error("unknown parameter `{0}`")]
    UnknownKey(String),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraParams {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera origin in the body frame, meters.
    pub offset: [f64; 3],
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
            offset: [0.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapParams {
    pub d_max: f64,
    pub half_angle_deg: f64,
}

impl Default for CapParams {
    fn default() -> Self {
        Self {
            d_max: 10.0,
            half_angle_deg: 45.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorParams {
    pub range: f64,
    pub n_rays: usize,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            range: 10.0,
            n_rays: 720,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    pub step: f64,
    pub success_radius: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            step: 0.2,
            success_radius: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub remote_timeout_s: f64,
    pub remote_retries: usize,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            remote_timeout_s: 60.0,
            remote_retries: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineParams {
    pub camera: CameraParams,
    pub cap: CapParams,
    pub sensor: SensorParams,
    pub frontier: FrontierParams,
    pub anchors: AnchorParams,
    pub validation: ValidationParams,
    pub motion: MotionParams,
    pub metrics: MetricParams,
    pub policy: PolicyParams,
}

impl EngineParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.camera_model()?;
        self.fov_cap()?;
        self.validation.validate().map_err(ConfigError::Invalid)?;
        let a = &self.anchors;
        if a.m_nom < 2 || a.m_max < a.m_nom {
            return Err(ConfigError::Invalid("anchors need 2 <= m_nom <= m_max".into()));
        }
        if !(self.motion.step > 0.0 && self.motion.success_radius > 0.0) {
            return Err(ConfigError::Invalid(
                "motion step and success radius must be positive".into(),
            ));
        }
        if !(self.sensor.range > 0.0 && self.sensor.n_rays > 0) {
            return Err(ConfigError::Invalid(
                "sensor range and ray count must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn fov_cap(&self) -> Result<FovCap, ConfigError> {
        FovCap::new(self.cap.d_max, self.cap.half_angle_deg.to_radians())
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn camera_model(&self) -> Result<Camera, ConfigError> {
        let c = &self.camera;
        let intrinsics = Intrinsics {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        };
        intrinsics.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Camera {
            intrinsics,
            extrinsic: RigidTransform::forward_camera(Vec3::new(c.offset[0], c.offset[1], c.offset[2])),
        })
    }

    /// Applies a JSON document and then `key=value` assignments on top of `self`.
    pub fn with_overrides(&self, document: Option<&Value>, assignments: &[String]) -> Result<Self, ConfigError> {
        let mut tree = serde_json::to_value(self).expect("params serialize");
        if let Some(doc) = document {
            merge(&mut tree, doc, "")?;
        }
        for a in assignments {
            let (key, raw) = a.split_once('=').ok_or_else(|| ConfigError::BadAssignment(a.clone()))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::BadAssignment(a.clone()));
            }
            let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
            let patch = key.rsplit('.').fold(value, |acc, part| {
                let mut m = serde_json::Map::new();
                m.insert(part.to_string(), acc);
                Value::Object(m)
            });
            merge(&mut tree, &patch, "")?;
        }
        let out: Self = serde_json::from_value(tree).map_err(|e| ConfigError::Json {
            context: "parameter overrides".into(),
            source: e,
        })?;
        out.validate()?;
        Ok(out)
    }
}

fn merge(base: &mut Value, patch: &Value, prefix: &str) -> Result<(), ConfigError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                let slot = b.get_mut(k).ok_or_else(|| ConfigError::UnknownKey(path.clone()))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}
