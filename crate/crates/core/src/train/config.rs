use crate::error::{EpvtError, Result};
use crate::objectives::{MixupPrompt, ObjectiveConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Domain prompts, adapter and domain mixup.
    Epvt,
    /// Pooled cross-entropy on the promptless feature.
    Erm,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Epvt => "epvt",
            Method::Erm => "erm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "epvt" => Ok(Method::Epvt),
            "erm" => Ok(Method::Erm),
            other => Err(EpvtError::UnsupportedMethod(format!("`{other}` (expected epvt or erm)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Label-preserving image augmentations. A zero magnitude disables a transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    /// Maximum rotation in degrees, sampled uniformly in `[-r, r]`.
    pub rotation_deg: f64,
    /// Maximum relative per-channel gain change.
    pub color_jitter: f64,
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            hflip: false,
            vflip: false,
            rotation_deg: 0.0,
            color_jitter: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.hflip && !self.vflip && self.rotation_deg == 0.0 && self.color_jitter == 0.0
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            rotation_deg: 15.0,
            color_jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Epvt,
            learning_rate: 3e-4,
            weight_decay: 1e-2,
            batch_size: 64,
            max_epochs: 60,
            patience: 22,
            seed: 0,
            objective: ObjectiveConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

pub(crate) fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(EpvtError::InvalidConfig(format!("`{key}` must be true or false, got `{v}`"))),
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| EpvtError::InvalidConfig(format!("`{key}` has invalid value `{v}`")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 15] = [
        "method",
        "learning_rate",
        "weight_decay",
        "batch_size",
        "max_epochs",
        "patience",
        "seed",
        "mixup_alpha",
        "lambda_w",
        "mixup_prompt",
        "adapter_detach",
        "aug_hflip",
        "aug_vflip",
        "aug_rotation",
        "aug_color_jitter",
    ];

    /// Sets one field from its config-file form. Returns `false` for keys
    /// this struct does not own.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "method" => self.method = Method::parse(v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "max_epochs" => self.max_epochs = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "mixup_alpha" => self.objective.mixup_alpha = parse_num(key, v)?,
            "lambda_w" => self.objective.lambda_w = parse_num(key, v)?,
            "mixup_prompt" => self.objective.mixup_prompt = MixupPrompt::parse(v)?,
            "adapter_detach" => self.objective.adapter_detach = parse_bool(key, v)?,
            "aug_hflip" => self.augment.hflip = parse_bool(key, v)?,
            "aug_vflip" => self.augment.vflip = parse_bool(key, v)?,
            "aug_rotation" => self.augment.rotation_deg = parse_num(key, v)?,
            "aug_color_jitter" => self.augment.color_jitter = parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every field in config-file form, in [`Self::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let o = &self.objective;
        let a = &self.augment;
        vec![
            ("method", self.method.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("mixup_alpha", o.mixup_alpha.to_string()),
            ("lambda_w", o.lambda_w.to_string()),
            ("mixup_prompt", o.mixup_prompt.as_str().to_string()),
            ("adapter_detach", o.adapter_detach.to_string()),
            ("aug_hflip", a.hflip.to_string()),
            ("aug_vflip", a.vflip.to_string()),
            ("aug_rotation", a.rotation_deg.to_string()),
            ("aug_color_jitter", a.color_jitter.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EpvtError::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be nonnegative, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be positive".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        let o = &self.objective;
        if !(o.mixup_alpha > 0.0 && o.mixup_alpha.is_finite()) {
            return bad(format!("mixup_alpha must be positive, got {}", o.mixup_alpha));
        }
        if !(o.lambda_w >= 0.0 && o.lambda_w.is_finite()) {
            return bad(format!("lambda_w must be nonnegative, got {}", o.lambda_w));
        }
        let a = &self.augment;
        if !(0.0..=180.0).contains(&a.rotation_deg) || !(0.0..1.0).contains(&a.color_jitter) {
            return bad("aug_rotation must lie in [0, 180] and aug_color_jitter in [0, 1)".into());
        }
        Ok(())
    }
}
