//! Run configuration: a flat `key = value` text format.
//!
//! Every key has a documented default and an origin tag. `method`-origin
//! defaults are the published working points of the editing and
//! optimization scheme; changing one requires `allow_method_overrides =
//! true` in the same file so a config cannot silently drift off them.
//! Unknown keys are rejected outright. `#` starts a comment.

use super::IoError;
use crate::backbone::{BackboneSpec, LayerSpec, SceneSpec};
use crate::editing::EditParams;
use crate::evaluation::{SweepParameter, SweepSpec};
use crate::geometry::{BoxParams, Trajectory};
use crate::masks::MaskParams;
use crate::objective::{lambda_reg_for_canvas, LossWeights, MaskSource};
use crate::optimizer::LoopConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Where a configuration default comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigOrigin {
    /// Fixed working point of the method; override requires the flag.
    Method,
    /// Artifact-level choice; override freely.
    Artifact,
}

/// Key table: name, origin, default (as written in config syntax).
pub const CONFIG_KEYS: &[(&str, ConfigOrigin, &str)] = &[
    ("ladder", ConfigOrigin::Artifact, "40x40x8,20x20x8,10x10x8,5x5x8"),
    ("tracked_tokens", ConfigOrigin::Artifact, "1"),
    ("seed", ConfigOrigin::Artifact, "0"),
    ("denoise_steps", ConfigOrigin::Method, "40"),
    ("edit_steps", ConfigOrigin::Method, "5"),
    ("inner_steps", ConfigOrigin::Method, "5"),
    ("learning_rate", ConfigOrigin::Artifact, "0.01"),
    ("min_box_size", ConfigOrigin::Artifact, "0.01"),
    ("temporal_edit_steps", ConfigOrigin::Artifact, ""),
    ("weaken", ConfigOrigin::Method, "0.001"),
    ("strengthen", ConfigOrigin::Method, "0.15"),
    ("channel_fraction", ConfigOrigin::Method, "0.5"),
    ("sigma_scale", ConfigOrigin::Method, "0.3333333333333333"),
    ("lambda_edge", ConfigOrigin::Method, "0.03"),
    ("normalize_kernel", ConfigOrigin::Method, "true"),
    ("kappa_floor", ConfigOrigin::Artifact, "1e-6"),
    ("lambda_neg", ConfigOrigin::Method, "10"),
    ("lambda_reg_scale", ConfigOrigin::Method, "0.1"),
    ("loss_mask_source", ConfigOrigin::Artifact, "current_box"),
    ("canvas", ConfigOrigin::Artifact, "40x40"),
    ("frames", ConfigOrigin::Method, "24"),
    ("scene_blob_start", ConfigOrigin::Artifact, "0.45,0.5"),
    ("scene_blob_end", ConfigOrigin::Artifact, "0.55,0.5"),
    ("scene_blob_extent", ConfigOrigin::Artifact, "0.12,0.12"),
    ("scene_noise", ConfigOrigin::Artifact, "0.1"),
    ("scene_seed", ConfigOrigin::Artifact, "0"),
    ("trajectory_file", ConfigOrigin::Artifact, ""),
    ("traj_box_start", ConfigOrigin::Artifact, "0.27,0.42,0.43,0.58"),
    ("traj_box_end", ConfigOrigin::Artifact, "0.37,0.42,0.53,0.58"),
    ("detections_file", ConfigOrigin::Artifact, ""),
    ("controls_file", ConfigOrigin::Artifact, ""),
    ("window", ConfigOrigin::Method, "24"),
    ("total_frames", ConfigOrigin::Artifact, ""),
    ("sweep_parameter", ConfigOrigin::Artifact, "lambda_reg_scale"),
    ("sweep_values", ConfigOrigin::Artifact, "0.001,0.01,0.1,1"),
    ("gradcheck_trials", ConfigOrigin::Artifact, "100"),
    ("gradcheck_tolerance", ConfigOrigin::Artifact, "1e-3"),
    ("fd_step", ConfigOrigin::Artifact, "1e-5"),
    ("allow_method_overrides", ConfigOrigin::Artifact, "false"),
];

/// A parsed configuration: defaults plus file overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    explicit: std::collections::BTreeSet<String>,
    /// Directory of the config file; relative paths resolve against it.
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: CONFIG_KEYS
                .iter()
                .map(|(k, _, d)| (k.to_string(), d.to_string()))
                .collect(),
            explicit: Default::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, IoError> {
        let mut config = Self {
            base_dir: base_dir.to_path_buf(),
            ..Default::default()
        };
        let mut overrides: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(IoError::Parse {
                    line: i + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !config.values.contains_key(&key) {
                return Err(IoError::UnknownKey(key));
            }
            overrides.push((key, value));
        }
        let allow = overrides
            .iter()
            .rev()
            .find(|(k, _)| k == "allow_method_overrides")
            .map(|(_, v)| v == "true")
            .unwrap_or(false);
        for (key, value) in overrides {
            let (_, origin, default) = CONFIG_KEYS.iter().find(|(k, _, _)| *k == key).unwrap();
            if *origin == ConfigOrigin::Method && value != *default && !allow {
                return Err(IoError::MethodOverride(key));
            }
            config.explicit.insert(key.clone());
            config.values.insert(key, value);
        }
        Ok(config)
    }

    /// Whether the file set this key (as opposed to the built-in default).
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn from_path(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base)
    }

    /// Applies a command-line seed on top of the config.
    pub fn set_seed(&mut self, seed: u64) {
        self.explicit.insert("seed".into());
        self.values.insert("seed".into(), seed.to_string());
    }

    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} missing from table"))
    }

    fn f64_key(&self, key: &str) -> Result<f64, IoError> {
        self.raw(key).parse().map_err(|_| IoError::BadValue {
            key: key.into(),
            message: format!("`{}` is not a number", self.raw(key)),
        })
    }

    fn usize_key(&self, key: &str) -> Result<usize, IoError> {
        self.raw(key).parse().map_err(|_| IoError::BadValue {
            key: key.into(),
            message: format!("`{}` is not an integer", self.raw(key)),
        })
    }

    fn u64_key(&self, key: &str) -> Result<u64, IoError> {
        self.raw(key).parse().map_err(|_| IoError::BadValue {
            key: key.into(),
            message: format!("`{}` is not an integer", self.raw(key)),
        })
    }

    fn bool_key(&self, key: &str) -> Result<bool, IoError> {
        match self.raw(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(IoError::BadValue {
                key: key.into(),
                message: format!("`{other}` is not true/false"),
            }),
        }
    }

    fn pair_key(&self, key: &str) -> Result<(f64, f64), IoError> {
        let parts: Vec<&str> = self.raw(key).split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(IoError::BadValue {
                key: key.into(),
                message: "expected `x,y`".into(),
            });
        }
        Ok((
            parts[0].parse().map_err(|_| IoError::BadValue {
                key: key.into(),
                message: "bad number".into(),
            })?,
            parts[1].parse().map_err(|_| IoError::BadValue {
                key: key.into(),
                message: "bad number".into(),
            })?,
        ))
    }

    fn box_key(&self, key: &str) -> Result<BoxParams, IoError> {
        let parts: Vec<f64> = self
            .raw(key)
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| IoError::BadValue {
                key: key.into(),
                message: "expected `l,t,r,b`".into(),
            })?;
        if parts.len() != 4 {
            return Err(IoError::BadValue {
                key: key.into(),
                message: "expected four coordinates".into(),
            });
        }
        BoxParams::new(parts[0], parts[1], parts[2], parts[3]).map_err(|e| IoError::BadValue {
            key: key.into(),
            message: e.to_string(),
        })
    }

    pub fn seed(&self) -> Result<u64, IoError> {
        self.u64_key("seed")
    }

    pub fn canvas(&self) -> Result<(u32, u32), IoError> {
        let parts: Vec<&str> = self.raw("canvas").split('x').collect();
        if parts.len() != 2 {
            return Err(IoError::BadValue {
                key: "canvas".into(),
                message: "expected `WxH`".into(),
            });
        }
        let w = parts[0].parse().map_err(|_| IoError::BadValue {
            key: "canvas".into(),
            message: "bad width".into(),
        })?;
        let h = parts[1].parse().map_err(|_| IoError::BadValue {
            key: "canvas".into(),
            message: "bad height".into(),
        })?;
        Ok((w, h))
    }

    pub fn backbone_spec(&self) -> Result<BackboneSpec, IoError> {
        let ladder = self
            .raw("ladder")
            .split(',')
            .map(|rung| {
                let dims: Vec<usize> = rung
                    .trim()
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| IoError::BadValue {
                        key: "ladder".into(),
                        message: format!("bad rung `{rung}`"),
                    })?;
                if dims.len() != 3 {
                    return Err(IoError::BadValue {
                        key: "ladder".into(),
                        message: format!("rung `{rung}` is not HxWxC"),
                    });
                }
                Ok(LayerSpec::new(dims[0], dims[1], dims[2]))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BackboneSpec {
            ladder,
            tracked_tokens: self.usize_key("tracked_tokens")?,
            seed: self.seed()?,
            denoise_steps: self.usize_key("denoise_steps")?,
            edit_steps: self.usize_key("edit_steps")?,
        })
    }

    pub fn loop_config(&self) -> Result<LoopConfig, IoError> {
        let temporal = match self.raw("temporal_edit_steps") {
            "" => None,
            v => Some(v.parse::<usize>().map_err(|_| IoError::BadValue {
                key: "temporal_edit_steps".into(),
                message: "not an integer".into(),
            })?),
        };
        Ok(LoopConfig {
            denoise_steps: self.usize_key("denoise_steps")?,
            edit_steps: self.usize_key("edit_steps")?,
            inner_steps: self.usize_key("inner_steps")?,
            learning_rate: self.f64_key("learning_rate")?,
            min_box_size: self.f64_key("min_box_size")?,
            seed: self.seed()?,
            temporal_edit_steps: temporal,
        })
    }

    pub fn edit_params(&self) -> Result<EditParams, IoError> {
        Ok(EditParams {
            weaken: self.f64_key("weaken")?,
            strengthen: self.f64_key("strengthen")?,
            channel_fraction: self.f64_key("channel_fraction")?,
        })
    }

    pub fn mask_params(&self) -> Result<MaskParams, IoError> {
        Ok(MaskParams {
            sigma_scale: self.f64_key("sigma_scale")?,
            lambda_edge: self.f64_key("lambda_edge")?,
            normalize_kernel: self.bool_key("normalize_kernel")?,
            kappa_floor: self.f64_key("kappa_floor")?,
        })
    }

    pub fn loss_weights(&self) -> Result<LossWeights, IoError> {
        let mask_source = match self.raw("loss_mask_source") {
            "current_box" => MaskSource::CurrentBox,
            "user_box" => MaskSource::UserBox,
            other => {
                return Err(IoError::BadValue {
                    key: "loss_mask_source".into(),
                    message: format!("`{other}` is not user_box/current_box"),
                })
            }
        };
        let tracked = self.usize_key("tracked_tokens")?;
        Ok(LossWeights {
            lambda_neg: self.f64_key("lambda_neg")?,
            lambda_reg: lambda_reg_for_canvas(self.f64_key("lambda_reg_scale")?, self.canvas()?),
            mask_source,
            token_set: (0..tracked).collect(),
        })
    }

    pub fn scene_spec(&self) -> Result<SceneSpec, IoError> {
        Ok(SceneSpec::linear(
            self.pair_key("scene_blob_start")?,
            self.pair_key("scene_blob_end")?,
            self.pair_key("scene_blob_extent")?,
            self.usize_key("frames")?,
            self.f64_key("scene_noise")?,
            self.u64_key("scene_seed")?,
        ))
    }

    /// The user trajectory: read from `trajectory_file` when set, otherwise
    /// interpolated linearly between `traj_box_start` and `traj_box_end`.
    pub fn user_trajectory(&self) -> Result<Trajectory, IoError> {
        let file = self.raw("trajectory_file");
        if !file.is_empty() {
            let path = self.resolve(file);
            let parsed = super::read_trajectory_json(&path)?;
            return parsed.to_trajectory();
        }
        let start = self.box_key("traj_box_start")?;
        let end = self.box_key("traj_box_end")?;
        let frames = self.usize_key("frames")?;
        if frames == 0 {
            return Err(IoError::BadValue {
                key: "frames".into(),
                message: "must be positive".into(),
            });
        }
        let traj = (0..frames)
            .map(|f| {
                let a = if frames > 1 {
                    f as f64 / (frames - 1) as f64
                } else {
                    0.0
                };
                let mix = |x: f64, y: f64| x + a * (y - x);
                BoxParams::new(
                    mix(start.left, end.left),
                    mix(start.top, end.top),
                    mix(start.right, end.right),
                    mix(start.bottom, end.bottom),
                )
                .map_err(|e| IoError::Invalid(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Trajectory::new(traj))
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec, IoError> {
        let parameter =
            SweepParameter::parse(self.raw("sweep_parameter")).map_err(|e| IoError::BadValue {
                key: "sweep_parameter".into(),
                message: e.to_string(),
            })?;
        let values = self
            .raw("sweep_values")
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| IoError::BadValue {
                key: "sweep_values".into(),
                message: "bad number in ladder".into(),
            })?;
        if values.is_empty() {
            return Err(IoError::BadValue {
                key: "sweep_values".into(),
                message: "empty ladder".into(),
            });
        }
        Ok(SweepSpec {
            parameter,
            values,
            seed: self.seed()?,
        })
    }

    pub fn gradcheck_config(&self) -> Result<crate::grad::GradCheckConfig, IoError> {
        Ok(crate::grad::GradCheckConfig {
            trials: self.usize_key("gradcheck_trials")?,
            tolerance: self.f64_key("gradcheck_tolerance")?,
            fd_step: self.f64_key("fd_step")?,
            seed: self.seed()?,
            edit_mode: crate::editing::EditMode::Differentiable,
        })
    }

    pub fn window(&self) -> Result<usize, IoError> {
        self.usize_key("window")
    }

    pub fn total_frames(&self) -> Result<Option<usize>, IoError> {
        match self.raw("total_frames") {
            "" => Ok(None),
            v => Ok(Some(v.parse().map_err(|_| IoError::BadValue {
                key: "total_frames".into(),
                message: "not an integer".into(),
            })?)),
        }
    }

    pub fn detections_file(&self) -> Option<PathBuf> {
        match self.raw("detections_file") {
            "" => None,
            v => Some(self.resolve(v)),
        }
    }

    pub fn controls_file(&self) -> Option<PathBuf> {
        match self.raw("controls_file") {
            "" => None,
            v => Some(self.resolve(v)),
        }
    }

    fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}
