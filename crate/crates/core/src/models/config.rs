use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Deterministic recurrent path only.
    Rnn,
    /// Stochastic state only.
    Ssm,
    /// Deterministic and stochastic parts.
    Rssm,
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(Self::Rnn),
            "ssm" => Ok(Self::Ssm),
            "rssm" => Ok(Self::Rssm),
            _ => Err(Error::config(format!("unknown model family `{s}` (rnn|ssm|rssm)"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rnn => "rnn",
            Self::Ssm => "ssm",
            Self::Rssm => "rssm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "elu" => Ok(Self::Elu),
            _ => Err(Error::config(format!("unknown activation `{s}` (relu|elu)"))),
        }
    }
}

/// One convolution or transposed-convolution layer of the image networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub in_size: usize,
    pub out_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    /// Stochastic state size (ignored by the rnn family).
    pub stoch: usize,
    /// Deterministic state size (ignored by the ssm family).
    pub deter: usize,
    /// Width of the dense layers.
    pub hidden: usize,
    pub activation: Activation,
    pub image_size: usize,
    pub channels: usize,
    /// Channel count of the first conv layer; later layers double it.
    pub cnn_depth: usize,
    pub std_floor: f64,
    pub action_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Rssm,
            stoch: 30,
            deter: 200,
            hidden: 200,
            activation: Activation::Relu,
            image_size: 32,
            channels: 3,
            cnn_depth: 16,
            std_floor: 0.1,
            action_dim: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.image_size != 64 && (self.image_size < 4 || !self.image_size.is_power_of_two()) {
            return bad(format!(
                "image_size {} unsupported: use 64 or a power of two >= 4",
                self.image_size
            ));
        }
        if self.channels == 0 || self.cnn_depth == 0 || self.hidden == 0 || self.action_dim == 0 {
            return bad("channels, cnn_depth, hidden and action_dim must be positive".into());
        }
        match self.family {
            Family::Rnn if self.deter == 0 => return bad("rnn family needs deter > 0".into()),
            Family::Ssm if self.stoch == 0 => return bad("ssm family needs stoch > 0".into()),
            Family::Rssm if self.stoch == 0 || self.deter == 0 => {
                return bad("rssm family needs stoch > 0 and deter > 0".into())
            }
            _ => {}
        }
        if !(self.std_floor > 0.0) {
            return bad("std_floor must be positive".into());
        }
        Ok(())
    }

    /// Effective stochastic size: zero for the rnn family.
    pub fn stoch_dim(&self) -> usize {
        match self.family {
            Family::Rnn => 0,
            _ => self.stoch,
        }
    }

    /// Effective deterministic size: zero for the ssm family.
    pub fn deter_dim(&self) -> usize {
        match self.family {
            Family::Ssm => 0,
            _ => self.deter,
        }
    }

    /// Width of the decoder input `[h, s]`.
    pub fn feature_dim(&self) -> usize {
        self.stoch_dim() + self.deter_dim()
    }

    pub fn image_len(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    fn halving_layers(&self) -> usize {
        (self.image_size.trailing_zeros() - 1) as usize
    }

    pub fn encoder_layers(&self) -> Vec<ConvLayer> {
        let d = self.cnn_depth;
        let mut out = Vec::new();
        if self.image_size == 64 {
            let mut size = 64;
            let mut in_c = self.channels;
            for i in 0..4 {
                let next = (size - 4) / 2 + 1;
                out.push(ConvLayer {
                    kernel: 4,
                    stride: 2,
                    pad: 0,
                    in_c,
                    out_c: d << i,
                    in_size: size,
                    out_size: next,
                });
                in_c = d << i;
                size = next;
            }
        } else {
            let mut size = self.image_size;
            let mut in_c = self.channels;
            for i in 0..self.halving_layers() {
                out.push(ConvLayer {
                    kernel: 4,
                    stride: 2,
                    pad: 1,
                    in_c,
                    out_c: d << i,
                    in_size: size,
                    out_size: size / 2,
                });
                in_c = d << i;
                size /= 2;
            }
        }
        out
    }

    pub fn embed_dim(&self) -> usize {
        let last = *self.encoder_layers().last().expect("at least one conv layer");
        last.out_size * last.out_size * last.out_c
    }

    /// Spatial size and channels of the tensor the decoder's dense layer
    /// reshapes into, followed by the transposed-conv stack.
    pub fn decoder_layers(&self) -> (usize, usize, Vec<ConvLayer>) {
        let d = self.cnn_depth;
        let mut out = Vec::new();
        if self.image_size == 64 {
            let top = 32 * d;
            let spec = [(5, 4 * d), (5, 2 * d), (6, d), (6, self.channels)];
            let (mut size, mut in_c) = (1, top);
            for (k, c) in spec {
                let next = (size - 1) * 2 + k;
                out.push(ConvLayer {
                    kernel: k,
                    stride: 2,
                    pad: 0,
                    in_c,
                    out_c: c,
                    in_size: size,
                    out_size: next,
                });
                size = next;
                in_c = c;
            }
            (1, top, out)
        } else {
            let n = self.halving_layers();
            let top = d << (n - 1);
            let (mut size, mut in_c) = (2, top);
            for i in 0..n {
                let c = if i + 1 == n { self.channels } else { d << (n - 2 - i) };
                out.push(ConvLayer {
                    kernel: 4,
                    stride: 2,
                    pad: 1,
                    in_c,
                    out_c: c,
                    in_size: size,
                    out_size: size * 2,
                });
                size *= 2;
                in_c = c;
            }
            (2, top, out)
        }
    }
}
