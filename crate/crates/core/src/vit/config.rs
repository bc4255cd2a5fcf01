use crate::error::{EpvtError, Result};

/// How the per-domain rank-one factors start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorInit {
    /// All ones: every domain prompt equals the shared prompt at step 0.
    Ones,
    /// Independent standard-normal entries.
    Normal,
}

impl FactorInit {
    pub fn as_str(self) -> &'static str {
        match self {
            FactorInit::Ones => "ones",
            FactorInit::Normal => "normal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ones" => Ok(FactorInit::Ones),
            "normal" => Ok(FactorInit::Normal),
            other => Err(EpvtError::InvalidConfig(format!("unknown factor_init `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    pub prompt_len: usize,
    pub num_domains: usize,
    pub adapter_hidden: usize,
    pub factor_init: FactorInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 4,
            embed_dim: 64,
            depth: 4,
            num_heads: 4,
            mlp_ratio: 4,
            num_classes: 2,
            prompt_len: 10,
            num_domains: 5,
            adapter_hidden: 64,
            factor_init: FactorInit::Ones,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            patch_size: 4,
            embed_dim: 16,
            depth: 2,
            num_heads: 2,
            mlp_ratio: 4,
            num_classes: 2,
            prompt_len: 4,
            num_domains: 3,
            adapter_hidden: 16,
            factor_init: FactorInit::Ones,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EpvtError::InvalidConfig(m));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.prompt_len < 1 {
            return bad("prompt_len must be at least 1".into());
        }
        if self.num_domains < 2 {
            return bad("num_domains must be at least 2".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.depth == 0 || self.mlp_ratio == 0 || self.adapter_hidden == 0 || self.embed_dim == 0 {
            return bad("depth, mlp_ratio, adapter_hidden and embed_dim must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Flattened length of one RGB patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Sequence length with or without prompt tokens.
    pub fn seq_len(&self, with_prompt: bool) -> usize {
        1 + self.num_patches() + if with_prompt { self.prompt_len } else { 0 }
    }

    pub const KEYS: [&'static str; 11] = [
        "image_size",
        "patch_size",
        "embed_dim",
        "depth",
        "num_heads",
        "mlp_ratio",
        "num_classes",
        "prompt_len",
        "num_domains",
        "adapter_hidden",
        "factor_init",
    ];

    /// Sets one field from its config-file form. Returns `false` for keys
    /// this struct does not own.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| EpvtError::InvalidConfig(format!("`{key}` must be a nonnegative integer, got `{v}`")))
        };
        match key {
            "image_size" => self.image_size = num(v)?,
            "patch_size" => self.patch_size = num(v)?,
            "embed_dim" => self.embed_dim = num(v)?,
            "depth" => self.depth = num(v)?,
            "num_heads" => self.num_heads = num(v)?,
            "mlp_ratio" => self.mlp_ratio = num(v)?,
            "num_classes" => self.num_classes = num(v)?,
            "prompt_len" => self.prompt_len = num(v)?,
            "num_domains" => self.num_domains = num(v)?,
            "adapter_hidden" => self.adapter_hidden = num(v)?,
            "factor_init" => self.factor_init = FactorInit::parse(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every field in config-file form, in [`Self::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let n = [
            self.image_size,
            self.patch_size,
            self.embed_dim,
            self.depth,
            self.num_heads,
            self.mlp_ratio,
            self.num_classes,
            self.prompt_len,
            self.num_domains,
            self.adapter_hidden,
        ];
        let mut out: Vec<_> = Self::KEYS[..10].iter().zip(n).map(|(k, v)| (*k, v.to_string())).collect();
        out.push(("factor_init", self.factor_init.as_str().to_string()));
        out
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let hidden = d * self.mlp_ratio;
        let block = 2 * (2 * d) + (d * 3 * d + 3 * d) + (d * d + d) + (d * hidden + hidden) + (hidden * d + d);
        let backbone = (self.patch_dim() * d + d) + d + (1 + self.num_patches()) * d + self.depth * block + 2 * d;
        let head = d * self.num_classes + self.num_classes;
        let prompt = self.prompt_len * d + self.num_domains * (self.prompt_len + d);
        let adapter = d * self.adapter_hidden + self.adapter_hidden + self.adapter_hidden * self.num_domains + self.num_domains;
        backbone + head + prompt + adapter
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 64);
        assert_eq!(c.seq_len(true), 75);
        assert_eq!(c.seq_len(false), 65);
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn entries_round_trip() {
        let mut c = ModelConfig::tiny();
        c.factor_init = FactorInit::Normal;
        let mut back = ModelConfig::default();
        for (k, v) in c.entries() {
            assert!(back.set(k, &v).unwrap());
        }
        assert_eq!(back, c);
        assert!(!back.set("depht", "3").unwrap());
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        let mut c = ModelConfig::default();
        c.patch_size = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.num_domains = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.prompt_len = 0;
        assert!(c.validate().is_err());
    }
}
