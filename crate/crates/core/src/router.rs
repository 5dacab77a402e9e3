//! Domain keys and the model-routing table: each (suturing phase, skill
//! domain) pair dispatches to one architecture family, input geometry, and
//! checkpoint.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{self, ClipTensor, CLIP_FRAMES};
use crate::error::{Error, Result};
use crate::models::LoadedModel;
use crate::ops::sigmoid;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    NeedleHandling,
    NeedleDriving,
    NeedleWithdrawal,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::NeedleHandling => "Needle Handling",
            Phase::NeedleDriving => "Needle Driving",
            Phase::NeedleWithdrawal => "Needle Withdrawal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Skill {
    NumberOfRepositions,
    NeedleHoldDepth,
    NeedleHoldRatio,
    NeedleHoldAngle,
    DrivingSmoothness,
    WristRotation,
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Skill::NumberOfRepositions => "Number of Repositions",
            Skill::NeedleHoldDepth => "Needle Hold Depth",
            Skill::NeedleHoldRatio => "Needle Hold Ratio",
            Skill::NeedleHoldAngle => "Needle Hold Angle",
            Skill::DrivingSmoothness => "Driving Smoothness",
            Skill::WristRotation => "Wrist Rotation",
        })
    }
}

/// One of the seven scoreable (phase, skill) pairs. Construction is
/// validated, so a `DomainKey` value is always routable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DomainKey {
    phase: Phase,
    skill: Skill,
}

const VALID_DOMAINS: [(Phase, Skill); 7] = [
    (Phase::NeedleHandling, Skill::NumberOfRepositions),
    (Phase::NeedleHandling, Skill::NeedleHoldDepth),
    (Phase::NeedleHandling, Skill::NeedleHoldRatio),
    (Phase::NeedleHandling, Skill::NeedleHoldAngle),
    (Phase::NeedleDriving, Skill::DrivingSmoothness),
    (Phase::NeedleDriving, Skill::WristRotation),
    (Phase::NeedleWithdrawal, Skill::WristRotation),
];

impl DomainKey {
    pub fn new(phase: Phase, skill: Skill) -> Result<Self> {
        if VALID_DOMAINS.contains(&(phase, skill)) {
            Ok(DomainKey { phase, skill })
        } else {
            Err(Error::Routing(format!(
                "({phase}, {skill}) is not a scoreable domain; valid domains: {}",
                Self::all().map(|d| format!("\"{d}\"")).join(", ")
            )))
        }
    }

    /// The seven valid keys, in the routing table's display order.
    pub fn all() -> [DomainKey; 7] {
        VALID_DOMAINS.map(|(phase, skill)| DomainKey { phase, skill })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn skill(&self) -> Skill {
        self.skill
    }

    /// Short identifier for file names.
    pub fn slug(&self) -> &'static str {
        match (self.phase, self.skill) {
            (Phase::NeedleHandling, Skill::NumberOfRepositions) => "handling_repositions",
            (Phase::NeedleHandling, Skill::NeedleHoldDepth) => "handling_hold_depth",
            (Phase::NeedleHandling, Skill::NeedleHoldRatio) => "handling_hold_ratio",
            (Phase::NeedleHandling, Skill::NeedleHoldAngle) => "handling_hold_angle",
            (Phase::NeedleDriving, Skill::DrivingSmoothness) => "driving_smoothness",
            (Phase::NeedleDriving, Skill::WristRotation) => "driving_wrist_rotation",
            (Phase::NeedleWithdrawal, Skill::WristRotation) => "withdrawal_wrist_rotation",
            _ => unreachable!("constructor rejects invalid pairs"),
        }
    }
}

impl fmt::Display for DomainKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.phase, self.skill)
    }
}

impl FromStr for DomainKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        for key in DomainKey::all() {
            if key.to_string() == s {
                return Ok(key);
            }
        }
        Err(Error::Routing(format!(
            "unknown domain {s:?}; valid domains: {}",
            DomainKey::all().map(|d| format!("\"{d}\"")).join(", ")
        )))
    }
}

impl Serialize for DomainKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DomainKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// ── Routes ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "MViTv2")]
    Mvit,
    #[serde(rename = "CNN3D")]
    Cnn3d,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Mvit => "MViTv2",
            ModelFamily::Cnn3d => "CNN3D",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub domain: DomainKey,
    pub family: ModelFamily,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub checkpoint: PathBuf,
}

/// The seven stock routes: the transformer at 224x224 for the four
/// longer-temporal-dependency domains, the 3D-CNN at 384x384 for the three
/// needle-hold domains.
pub fn default_routes() -> Vec<RouteEntry> {
    DomainKey::all()
        .into_iter()
        .map(|domain| {
            let family = match domain.skill() {
                Skill::NeedleHoldDepth | Skill::NeedleHoldRatio | Skill::NeedleHoldAngle => {
                    ModelFamily::Cnn3d
                }
                _ => ModelFamily::Mvit,
            };
            let side = match family {
                ModelFamily::Mvit => 224,
                ModelFamily::Cnn3d => 384,
            };
            RouteEntry {
                domain,
                family,
                height: side,
                width: side,
                frames: CLIP_FRAMES,
                checkpoint: PathBuf::from(format!("checkpoints/{}.ckpt", domain.slug())),
            }
        })
        .collect()
}

/// Reject duplicate domains; every entry must also use 16 frames.
pub fn validate_routes(routes: &[RouteEntry]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for entry in routes {
        if !seen.insert(entry.domain) {
            return Err(Error::Routing(format!(
                "duplicate route for domain \"{}\"",
                entry.domain
            )));
        }
        if entry.frames != CLIP_FRAMES {
            return Err(Error::Routing(format!(
                "route for \"{}\" wants {} frames; the pipeline is fixed at {CLIP_FRAMES}",
                entry.domain, entry.frames
            )));
        }
    }
    Ok(())
}

pub fn read_routes(path: &Path) -> Result<Vec<RouteEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let routes: Vec<RouteEntry> =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    validate_routes(&routes)?;
    Ok(routes)
}

pub fn write_routes(path: &Path, routes: &[RouteEntry]) -> Result<()> {
    validate_routes(routes)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(routes).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn resolve<'a>(routes: &'a [RouteEntry], domain: DomainKey) -> Result<&'a RouteEntry> {
    routes.iter().find(|e| e.domain == domain).ok_or_else(|| {
        Error::Routing(format!(
            "no route for domain \"{domain}\"; table covers: {}",
            routes.iter().map(|e| format!("\"{}\"", e.domain)).collect::<Vec<_>>().join(", ")
        ))
    })
}

// ── Prediction ──────────────────────────────────────────────────────

/// Sample to 16 frames, resize to the target geometry, and standardize.
/// Output shape is [1, C, frames, height, width].
pub fn preprocess_clip(clip: &ClipTensor, frames: usize, height: usize, width: usize) -> Result<Tensor<f32>> {
    let sampled = data::sample_clip_frames(clip, frames)?;
    let resized = crate::augment::resize_clip(&sampled, height, width);
    let flat = resized.normalized();
    Ok(flat.reshaped(&[1, resized.channels, resized.frames, resized.height, resized.width]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub score: f64,
    pub decision: u8,
}

/// Score = sigmoid(logit); decision thresholds at `threshold` (default 0.5).
pub fn predict_with_model(model: &LoadedModel, clip: &ClipTensor, threshold: f64) -> Result<Prediction> {
    let input = preprocess_clip(clip, CLIP_FRAMES, model.input_height(), model.input_width())?;
    let logit = model.forward_logits(&input)?.data()[0] as f64;
    let score = sigmoid(logit);
    Ok(Prediction { score, decision: u8::from(score >= threshold) })
}

/// Route a clip file to its domain's checkpoint and predict.
/// Relative checkpoint paths resolve against `routes_dir` when given.
pub fn predict(
    routes: &[RouteEntry],
    routes_dir: Option<&Path>,
    domain: DomainKey,
    clip_path: &Path,
) -> Result<Prediction> {
    validate_routes(routes)?;
    let entry = resolve(routes, domain)?;
    let ckpt_path = match (entry.checkpoint.is_absolute(), routes_dir) {
        (false, Some(dir)) => dir.join(&entry.checkpoint),
        _ => entry.checkpoint.clone(),
    };
    let model = LoadedModel::load(&ckpt_path)?;
    model.check_route(entry)?;
    let clip = data::read_clip(clip_path)?;
    predict_with_model(&model, &clip, 0.5)
}
