use candle_core::{DType, Device, Tensor, Var};

use super::config::ModelConfig;
use super::layers::{EncoderBlock, Init, LayerNorm, Linear, INIT_STD};
use crate::error::{EpvtError, Result};
use crate::prompt::{Adapter, PromptBank};
use crate::rng::{stream, Stream};
use crate::synth::ImageRecord;

/// Fixed input standardization applied by [`EpvtModel::images_to_tensor`]:
/// pixel `p` enters the network as `(p - PIXEL_MEAN) / PIXEL_STD`.
pub const PIXEL_MEAN: f32 = 0.5;
pub const PIXEL_STD: f32 = 0.25;

/// Parameter groups, used for optimizer selection and gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    PatchEmbed,
    ClassToken,
    PosEmbed,
    Blocks,
    Norm,
    Head,
    SharedPrompt,
    DomainFactors,
    Adapter,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::PatchEmbed,
        ParamGroup::ClassToken,
        ParamGroup::PosEmbed,
        ParamGroup::Blocks,
        ParamGroup::Norm,
        ParamGroup::Head,
        ParamGroup::SharedPrompt,
        ParamGroup::DomainFactors,
        ParamGroup::Adapter,
    ];

    /// Groups an ERM baseline trains.
    pub fn is_backbone_or_head(self) -> bool {
        !matches!(
            self,
            ParamGroup::SharedPrompt | ParamGroup::DomainFactors | ParamGroup::Adapter
        )
    }
}

#[derive(Debug, Clone)]
pub struct NamedVar {
    pub name: String,
    pub group: ParamGroup,
    pub var: Var,
}

/// Forward-pass switches used by tests and analyses.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Hide prompt tokens from every query: they still flow through the
    /// blocks but no other token can attend to them.
    pub mask_prompt_keys: bool,
}

/// Vision transformer with domain prompts and a prompt adapter.
#[derive(Debug, Clone)]
pub struct EpvtModel {
    config: ModelConfig,
    dtype: DType,
    device: Device,
    pub(crate) patch: Linear,
    pub(crate) cls_token: Var,
    pub(crate) pos_embed: Var,
    pub(crate) blocks: Vec<EncoderBlock>,
    pub(crate) norm: LayerNorm,
    pub(crate) head: Linear,
    pub(crate) prompts: PromptBank,
    pub(crate) adapter: Adapter,
}

impl EpvtModel {
    pub fn new(config: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let mut rng = stream(seed, Stream::Init);
        let mut init = Init {
            rng: &mut rng,
            dtype,
            device: &device,
        };
        let d = config.embed_dim;
        let patch = Linear::new(&mut init, config.patch_dim(), d)?;
        let cls_token = init.trunc_normal(d, INIT_STD)?;
        let pos_embed = init.trunc_normal((1 + config.num_patches(), d), INIT_STD)?;
        let blocks = (0..config.depth)
            .map(|_| EncoderBlock::new(&mut init, d, config.num_heads, config.mlp_ratio))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(&mut init, d)?;
        let head = Linear::new(&mut init, d, config.num_classes)?;
        let prompts = PromptBank::new(&mut init, config)?;
        let adapter = Adapter::new(&mut init, config)?;
        Ok(Self {
            config: config.clone(),
            dtype,
            device,
            patch,
            cls_token,
            pos_embed,
            blocks,
            norm,
            head,
            prompts,
            adapter,
        })
    }

    /// Independent copy of every parameter; [`Var`]s of a plain clone share
    /// storage with the original.
    pub fn deep_clone(&self) -> Result<Self> {
        let copy = Self::new(&self.config, self.dtype, 0)?;
        for (dst, src) in copy.named_vars().iter().zip(self.named_vars()) {
            dst.var.set(src.var.as_tensor())?;
        }
        Ok(copy)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn prompts(&self) -> &PromptBank {
        &self.prompts
    }

    pub fn adapter(&self) -> &Adapter {
        &self.adapter
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn blocks(&self) -> &[EncoderBlock] {
        &self.blocks
    }

    pub fn class_token(&self) -> &Var {
        &self.cls_token
    }

    pub fn pos_embed(&self) -> &Var {
        &self.pos_embed
    }

    pub fn patch_projection(&self) -> &Linear {
        &self.patch
    }

    /// Every trainable tensor with its checkpoint name, in a fixed order.
    pub fn named_vars(&self) -> Vec<NamedVar> {
        let mut out = Vec::new();
        let mut push = |name: String, group: ParamGroup, var: &Var| {
            out.push(NamedVar {
                name,
                group,
                var: var.clone(),
            })
        };
        push("patch.w".into(), ParamGroup::PatchEmbed, &self.patch.weight);
        push("patch.b".into(), ParamGroup::PatchEmbed, &self.patch.bias);
        push("cls_token".into(), ParamGroup::ClassToken, &self.cls_token);
        push("pos_embed".into(), ParamGroup::PosEmbed, &self.pos_embed);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            push(format!("{p}.ln1.gamma"), ParamGroup::Blocks, &b.ln1.gamma);
            push(format!("{p}.ln1.beta"), ParamGroup::Blocks, &b.ln1.beta);
            push(format!("{p}.qkv.w"), ParamGroup::Blocks, &b.qkv.weight);
            push(format!("{p}.qkv.b"), ParamGroup::Blocks, &b.qkv.bias);
            push(format!("{p}.proj.w"), ParamGroup::Blocks, &b.proj.weight);
            push(format!("{p}.proj.b"), ParamGroup::Blocks, &b.proj.bias);
            push(format!("{p}.ln2.gamma"), ParamGroup::Blocks, &b.ln2.gamma);
            push(format!("{p}.ln2.beta"), ParamGroup::Blocks, &b.ln2.beta);
            push(format!("{p}.fc1.w"), ParamGroup::Blocks, &b.fc1.weight);
            push(format!("{p}.fc1.b"), ParamGroup::Blocks, &b.fc1.bias);
            push(format!("{p}.fc2.w"), ParamGroup::Blocks, &b.fc2.weight);
            push(format!("{p}.fc2.b"), ParamGroup::Blocks, &b.fc2.bias);
        }
        push("norm.gamma".into(), ParamGroup::Norm, &self.norm.gamma);
        push("norm.beta".into(), ParamGroup::Norm, &self.norm.beta);
        push("head.w".into(), ParamGroup::Head, &self.head.weight);
        push("head.b".into(), ParamGroup::Head, &self.head.bias);
        push("prompt.shared".into(), ParamGroup::SharedPrompt, &self.prompts.shared);
        for (k, (u, v)) in self.prompts.u.iter().zip(&self.prompts.v).enumerate() {
            push(format!("prompt.u.{k}"), ParamGroup::DomainFactors, u);
            push(format!("prompt.v.{k}"), ParamGroup::DomainFactors, v);
        }
        push("adapter.w1".into(), ParamGroup::Adapter, &self.adapter.hidden.weight);
        push("adapter.b1".into(), ParamGroup::Adapter, &self.adapter.hidden.bias);
        push("adapter.w2".into(), ParamGroup::Adapter, &self.adapter.out.weight);
        push("adapter.b2".into(), ParamGroup::Adapter, &self.adapter.out.bias);
        out
    }

    /// Stacks standardized images into a `(B, S, S, 3)` tensor of the model's dtype.
    pub fn images_to_tensor(&self, images: &[&ImageRecord]) -> Result<Tensor> {
        let s = self.config.image_size;
        let mut data = Vec::with_capacity(images.len() * s * s * 3);
        for img in images {
            if img.size != s || img.pixels.len() != s * s * 3 {
                return Err(EpvtError::Dimension(format!(
                    "image is {}×{}, model expects {s}×{s}",
                    img.size, img.size
                )));
            }
            data.extend(img.pixels.iter().map(|p| (p - PIXEL_MEAN) / PIXEL_STD));
        }
        Ok(Tensor::from_vec(data, (images.len(), s, s, 3), &self.device)?.to_dtype(self.dtype)?)
    }

    /// `(B, S, S, 3)` images → `(B, N, p·p·3)` non-overlapping patches in
    /// row-major grid order.
    pub fn patchify(&self, images: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let (b, h, w, ch) = images.dims4()?;
        if h != c.image_size || w != c.image_size || ch != 3 {
            return Err(EpvtError::Dimension(format!(
                "images have shape ({b}, {h}, {w}, {ch}), model expects (B, {s}, {s}, 3)",
                s = c.image_size
            )));
        }
        let (g, p) = (c.grid(), c.patch_size);
        Ok(images
            .reshape((b, g, p, g, p, 3))?
            .permute((0, 1, 3, 2, 4, 5))?
            .reshape((b, g * g, p * p * 3))?)
    }

    /// Patch tokens `(B, N, d)`: projected patches plus their positional embeddings.
    pub fn patch_embed(&self, images: &Tensor) -> Result<Tensor> {
        let n = self.config.num_patches();
        let tokens = self.patch.forward(&self.patchify(images)?)?;
        let pos = self.pos_embed.as_tensor().narrow(0, 1, n)?;
        Ok(tokens.broadcast_add(&pos)?)
    }

    /// Builds `[class; prompt; patches]` as a `(B, L, d)` token sequence.
    pub fn token_sequence(&self, images: &Tensor, prompt: Option<&Tensor>) -> Result<Tensor> {
        let patches = self.patch_embed(images)?;
        let (b, _, d) = patches.dims3()?;
        let cls = (self.cls_token.as_tensor() + self.pos_embed.as_tensor().get(0)?)?
            .reshape((1, 1, d))?
            .broadcast_as((b, 1, d))?;
        match prompt {
            None => Ok(Tensor::cat(&[&cls, &patches], 1)?),
            Some(p) => {
                let p = self.expand_prompt(p, b)?;
                Ok(Tensor::cat(&[&cls, &p, &patches], 1)?)
            }
        }
    }

    fn expand_prompt(&self, prompt: &Tensor, batch: usize) -> Result<Tensor> {
        let (s, d) = (self.config.prompt_len, self.config.embed_dim);
        match prompt.dims() {
            [ps, pd] if *ps == s && *pd == d => Ok(prompt.unsqueeze(0)?.broadcast_as((batch, s, d))?),
            [pb, ps, pd] if *pb == batch && *ps == s && *pd == d => Ok(prompt.clone()),
            other => Err(EpvtError::Dimension(format!(
                "prompt has shape {other:?}, expected ({s}, {d}) or ({batch}, {s}, {d})"
            ))),
        }
    }

    /// Runs the encoder and returns all output tokens, before the final norm.
    pub fn encode(&self, images: &Tensor, prompt: Option<&Tensor>, opts: ForwardOptions) -> Result<Tensor> {
        let mut xs = self.token_sequence(images, prompt)?;
        let key_bias = if opts.mask_prompt_keys && prompt.is_some() {
            Some(self.prompt_key_bias()?)
        } else {
            None
        };
        for block in &self.blocks {
            xs = block.forward(&xs, key_bias.as_ref())?;
        }
        Ok(xs)
    }

    /// Additive attention-logit term that hides prompt positions as keys.
    pub fn prompt_key_bias(&self) -> Result<Tensor> {
        let l = self.config.seq_len(true);
        let s = self.config.prompt_len;
        let bias: Vec<f64> = (0..l)
            .map(|i| if (1..=s).contains(&i) { f64::NEG_INFINITY } else { 0.0 })
            .collect();
        Ok(Tensor::from_vec(bias, l, &self.device)?.to_dtype(self.dtype)?)
    }

    fn class_feature(&self, encoded: &Tensor) -> Result<Tensor> {
        let cls = encoded.narrow(1, 0, 1)?.squeeze(1)?;
        self.norm.forward(&cls)
    }

    /// Class-token feature `(B, d)` of the plain token sequence `[class; patches]`.
    pub fn forward_plain(&self, images: &Tensor) -> Result<Tensor> {
        self.class_feature(&self.encode(images, None, ForwardOptions::default())?)
    }

    /// Class-token feature `(B, d)` with `prompt` inserted after the class
    /// token at the first layer. `prompt` is `(s, d)` shared by the batch or
    /// `(B, s, d)` per image.
    pub fn forward_with_prompt(&self, images: &Tensor, prompt: &Tensor) -> Result<Tensor> {
        self.forward_with_prompt_opts(images, prompt, ForwardOptions::default())
    }

    pub fn forward_with_prompt_opts(&self, images: &Tensor, prompt: &Tensor, opts: ForwardOptions) -> Result<Tensor> {
        self.class_feature(&self.encode(images, Some(prompt), opts)?)
    }

    /// Classification head: logits `(B, C)`, no normalization.
    pub fn classify(&self, features: &Tensor) -> Result<Tensor> {
        let d = self.config.embed_dim;
        if features.dim(candle_core::D::Minus1)? != d {
            return Err(EpvtError::Dimension(format!(
                "feature width {} does not match embed_dim {d}",
                features.dim(candle_core::D::Minus1)?
            )));
        }
        self.head.forward(features)
    }

    /// Adapter simplex weights `(B, M)` for promptless features.
    pub fn adapter_weights(&self, features: &Tensor) -> Result<Tensor> {
        self.adapter.weights(features)
    }
}
