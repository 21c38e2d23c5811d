//! Architecture descriptions, parameter layouts and forward passes.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::{atanh, avg_pool2, batch_moments, batch_norm, conv, leaky_relu, upsample2};
use crate::error::{Error, Result};

/// Content is squeezed into this open interval before `atanh`.
pub(crate) const ATANH_LIMIT: f64 = 1.0 - 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Generator,
    Discriminator,
    Denoiser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserVariant {
    LinearConv,
    DncnnLite,
    UnetLite,
}

impl DenoiserVariant {
    pub const ALL: [DenoiserVariant; 3] = [
        DenoiserVariant::LinearConv,
        DenoiserVariant::DncnnLite,
        DenoiserVariant::UnetLite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DenoiserVariant::LinearConv => "linear_conv",
            DenoiserVariant::DncnnLite => "dncnn_lite",
            DenoiserVariant::UnetLite => "unet_lite",
        }
    }
}

impl std::str::FromStr for DenoiserVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DenoiserVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("variant", format!("unknown denoiser variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub width: usize,
    pub blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { width: 32, blocks: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub width: usize,
    /// Number of stride-2 conv blocks.
    pub layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { width: 32, layers: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub variant: DenoiserVariant,
    pub width: usize,
    /// Middle conv+norm+relu blocks of `dncnn_lite`; ignored by the other variants.
    pub depth: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { variant: DenoiserVariant::DncnnLite, width: 32, depth: 5 }
    }
}

/// Everything needed to rebuild a network's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Architecture {
    Generator { channels: usize, width: usize, blocks: usize },
    Discriminator { channels: usize, width: usize, layers: usize },
    Denoiser { variant: DenoiserVariant, channels: usize, width: usize, depth: usize },
    /// Test double: `clamp(content + noise, 0, 1)`.
    SumGenerator,
    /// Test double: returns its input.
    IdentityDenoiser,
    /// Test double: returns zeros.
    ZeroDenoiser,
    /// Test double: a score map filled with `value`.
    ConstantDiscriminator { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// Zero-mean normal with std `gain * sqrt(2 / fan_in)`.
    He { fan_in: usize, gain: f64 },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn conv_specs(out: &mut Vec<ParamSpec>, name: &str, cin: usize, cout: usize, k: usize, bias: bool, gain: f64) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![cout, cin, k, k],
        init: Init::He { fan_in: cin * k * k, gain },
    });
    if bias {
        out.push(ParamSpec { name: format!("{name}.bias"), shape: vec![cout], init: Init::Zeros });
    }
}

fn bn_specs(out: &mut Vec<ParamSpec>, name: &str, c: usize) {
    out.push(ParamSpec { name: format!("{name}.gamma"), shape: vec![c], init: Init::Ones });
    out.push(ParamSpec { name: format!("{name}.beta"), shape: vec![c], init: Init::Zeros });
}

impl Architecture {
    pub fn kind(&self) -> NetworkKind {
        match self {
            Architecture::Generator { .. } | Architecture::SumGenerator => NetworkKind::Generator,
            Architecture::Discriminator { .. } | Architecture::ConstantDiscriminator { .. } => {
                NetworkKind::Discriminator
            }
            Architecture::Denoiser { .. } | Architecture::IdentityDenoiser | Architecture::ZeroDenoiser => {
                NetworkKind::Denoiser
            }
        }
    }

    pub fn variant(&self) -> Option<DenoiserVariant> {
        match self {
            Architecture::Denoiser { variant, .. } => Some(*variant),
            _ => None,
        }
    }

    pub fn is_stub(&self) -> bool {
        matches!(
            self,
            Architecture::SumGenerator
                | Architecture::IdentityDenoiser
                | Architecture::ZeroDenoiser
                | Architecture::ConstantDiscriminator { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::config(key, "must be positive"))
            } else {
                Ok(())
            }
        };
        let channels = |c: usize| {
            if matches!(c, 1 | 3) {
                Ok(())
            } else {
                Err(Error::config("channels", format!("must be 1 or 3, got {c}")))
            }
        };
        match *self {
            Architecture::Generator { channels: c, width, blocks } => {
                channels(c)?;
                positive("generator.width", width)?;
                positive("generator.blocks", blocks)
            }
            Architecture::Discriminator { channels: c, width, layers } => {
                channels(c)?;
                positive("discriminator.width", width)?;
                positive("discriminator.layers", layers)
            }
            Architecture::Denoiser { variant, channels: c, width, depth } => {
                channels(c)?;
                if variant != DenoiserVariant::LinearConv {
                    positive("denoiser.width", width)?;
                }
                if variant == DenoiserVariant::DncnnLite {
                    positive("denoiser.depth", depth)?;
                }
                Ok(())
            }
            Architecture::ConstantDiscriminator { value } if !value.is_finite() => {
                Err(Error::config("discriminator.value", "must be finite"))
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn param_specs(&self) -> Vec<ParamSpec> {
        let mut p = Vec::new();
        match *self {
            Architecture::Generator { channels: c, width: w, blocks } => {
                conv_specs(&mut p, "head", 2 * c, w, 3, true, 1.0);
                for b in 0..blocks {
                    conv_specs(&mut p, &format!("block{b}.conv1"), w, w, 3, true, 1.0);
                    conv_specs(&mut p, &format!("block{b}.conv2"), w, w, 3, true, 0.5);
                }
                conv_specs(&mut p, "tail", w, c, 3, true, 0.1);
            }
            Architecture::Discriminator { channels: c, width: w, layers } => {
                let mut cin = c;
                for l in 0..layers {
                    let cout = w << l;
                    conv_specs(&mut p, &format!("down{l}"), cin, cout, 4, true, 1.0);
                    cin = cout;
                }
                conv_specs(&mut p, "score", cin, 1, 3, true, 1.0);
            }
            Architecture::Denoiser { variant, channels: c, width: w, depth } => match variant {
                DenoiserVariant::LinearConv => {
                    p.push(ParamSpec { name: "conv.weight".into(), shape: vec![c, c, 3, 3], init: Init::Zeros });
                    p.push(ParamSpec { name: "conv.bias".into(), shape: vec![c], init: Init::Zeros });
                }
                DenoiserVariant::DncnnLite => {
                    conv_specs(&mut p, "head", c, w, 3, true, 1.0);
                    for d in 0..depth {
                        conv_specs(&mut p, &format!("mid{d}.conv"), w, w, 3, false, 1.0);
                        bn_specs(&mut p, &format!("mid{d}.bn"), w);
                    }
                    conv_specs(&mut p, "tail", w, c, 3, true, 0.1);
                }
                DenoiserVariant::UnetLite => {
                    conv_specs(&mut p, "enc1a", c, w, 3, true, 1.0);
                    conv_specs(&mut p, "enc1b", w, w, 3, true, 1.0);
                    conv_specs(&mut p, "enc2a", w, 2 * w, 3, true, 1.0);
                    conv_specs(&mut p, "enc2b", 2 * w, 2 * w, 3, true, 1.0);
                    conv_specs(&mut p, "dec", 3 * w, w, 3, true, 1.0);
                    conv_specs(&mut p, "tail", w, c, 3, true, 0.1);
                }
            },
            _ => {}
        }
        p
    }

    /// Running-statistics buffers `(name, channels, init)`; means start at 0, variances at 1.
    pub(crate) fn buffer_specs(&self) -> Vec<ParamSpec> {
        let mut b = Vec::new();
        if let Architecture::Denoiser { variant: DenoiserVariant::DncnnLite, width, depth, .. } = *self {
            for d in 0..depth {
                b.push(ParamSpec { name: format!("mid{d}.bn.running_mean"), shape: vec![width], init: Init::Zeros });
                b.push(ParamSpec { name: format!("mid{d}.bn.running_var"), shape: vec![width], init: Init::Ones });
            }
        }
        b
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    pub(crate) fn arity(&self) -> usize {
        match self.kind() {
            NetworkKind::Generator => 2,
            _ => 1,
        }
    }

    /// Runs the network. With `batch_stats`, normalization layers use (and report)
    /// the statistics of this batch; otherwise they read `buffers`.
    pub(crate) fn forward(
        &self,
        inputs: &[&Tensor],
        params: &[Tensor],
        buffers: &[Tensor],
        batch_stats: bool,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let mut ps = params.iter();
        let mut next = || ps.next().ok_or_else(|| Error::Contract("parameter list too short".into()));
        let mut stats = Vec::new();
        let out = match *self {
            Architecture::Generator { blocks, .. } => {
                let (content, noise) = (inputs[0], inputs[1]);
                let x = Tensor::cat(&[content, noise], 1)?;
                let mut h = conv(&x, next()?, Some(next()?), 1, 1)?.relu()?;
                for _ in 0..blocks {
                    let r = conv(&h, next()?, Some(next()?), 1, 1)?.relu()?;
                    let r = conv(&r, next()?, Some(next()?), 1, 1)?;
                    h = (h + r)?;
                }
                let delta = conv(&h, next()?, Some(next()?), 1, 1)?;
                let base = atanh(&(content + noise)?.affine(2.0, -1.0)?.clamp(-ATANH_LIMIT, ATANH_LIMIT)?)?;
                (base + delta)?.tanh()?.affine(0.5, 0.5)?
            }
            Architecture::Discriminator { layers, .. } => {
                let mut h = inputs[0].clone();
                for _ in 0..layers {
                    h = leaky_relu(&conv(&h, next()?, Some(next()?), 2, 1)?)?;
                }
                conv(&h, next()?, Some(next()?), 1, 1)?
            }
            Architecture::Denoiser { variant, depth, .. } => {
                let x = inputs[0];
                let noise = match variant {
                    DenoiserVariant::LinearConv => conv(x, next()?, Some(next()?), 1, 1)?,
                    DenoiserVariant::DncnnLite => {
                        let mut h = conv(x, next()?, Some(next()?), 1, 1)?.relu()?;
                        for d in 0..depth {
                            let z = conv(&h, next()?, None, 1, 1)?;
                            let (gamma, beta) = (next()?, next()?);
                            let (mean, var) = if batch_stats {
                                let (m, v) = batch_moments(&z)?;
                                stats.push(m.clone());
                                stats.push(v.clone());
                                (m, v)
                            } else {
                                (buffers[2 * d].clone(), buffers[2 * d + 1].clone())
                            };
                            h = batch_norm(&z, &mean, &var, gamma, beta)?.relu()?;
                        }
                        conv(&h, next()?, Some(next()?), 1, 1)?
                    }
                    DenoiserVariant::UnetLite => {
                        let e1 = conv(x, next()?, Some(next()?), 1, 1)?.relu()?;
                        let e1 = conv(&e1, next()?, Some(next()?), 1, 1)?.relu()?;
                        let e2 = conv(&avg_pool2(&e1)?, next()?, Some(next()?), 1, 1)?.relu()?;
                        let e2 = conv(&e2, next()?, Some(next()?), 1, 1)?.relu()?;
                        let merged = Tensor::cat(&[&upsample2(&e2)?, &e1], 1)?;
                        let h = conv(&merged, next()?, Some(next()?), 1, 1)?.relu()?;
                        conv(&h, next()?, Some(next()?), 1, 1)?
                    }
                };
                (x - noise)?
            }
            Architecture::SumGenerator => (inputs[0] + inputs[1])?.clamp(0.0, 1.0)?,
            Architecture::IdentityDenoiser => inputs[0].clone(),
            Architecture::ZeroDenoiser => inputs[0].zeros_like()?,
            Architecture::ConstantDiscriminator { value } => {
                let (n, _, h, w) = inputs[0].dims4()?;
                Tensor::full(value, (n, 1, h, w), inputs[0].device())?.to_dtype(inputs[0].dtype())?
            }
        };
        Ok((out, stats))
    }
}
