use std::fmt;

use crate::checkpoint::WeightSnapshot;
use crate::error::{Error, Result};

/// Encoder family.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Dense layers with GELU between them; the last layer projects to the
    /// feature width without an activation.
    Mlp { hidden_dims: Vec<usize> },
    /// Pre-norm single-head transformer over `token_count` chunks of the
    /// input vector, mean-pooled and projected to the feature width.
    Attn {
        token_count: usize,
        token_dim: usize,
        block_count: usize,
    },
}

/// Shape of the encoder `f(x; θ)` without its classification head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub arch: Architecture,
    pub feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 32,
            arch: Architecture::Mlp { hidden_dims: vec![64, 64] },
            feature_dim: 32,
        }
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arch {
            Architecture::Mlp { hidden_dims } => write!(
                f,
                "mlp {} -> {:?} -> {}",
                self.input_dim, hidden_dims, self.feature_dim
            ),
            Architecture::Attn {
                token_count,
                token_dim,
                block_count,
            } => write!(
                f,
                "attn {}x{} x{} blocks -> {}",
                token_count, token_dim, block_count, self.feature_dim
            ),
        }
    }
}

const KEY_ARCH: &str = "config.arch";
const KEY_INPUT: &str = "config.input_dim";
const KEY_FEATURE: &str = "config.feature_dim";
const KEY_HIDDEN: &str = "config.hidden_dims";
const KEY_TOKENS: &str = "config.token_count";
const KEY_TOKEN_DIM: &str = "config.token_dim";
const KEY_BLOCKS: &str = "config.block_count";

impl ModelConfig {
    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, feature_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            arch: Architecture::Mlp { hidden_dims },
            feature_dim,
        }
    }

    pub fn attn(token_count: usize, token_dim: usize, block_count: usize, feature_dim: usize) -> Self {
        ModelConfig {
            input_dim: token_count * token_dim,
            arch: Architecture::Attn {
                token_count,
                token_dim,
                block_count,
            },
            feature_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("input_dim and feature_dim must be positive"));
        }
        match &self.arch {
            Architecture::Mlp { hidden_dims } => {
                if hidden_dims.iter().any(|&d| d == 0) {
                    return Err(Error::invalid("hidden dims must be positive"));
                }
            }
            Architecture::Attn {
                token_count,
                token_dim,
                block_count,
            } => {
                if *token_count == 0 || *token_dim == 0 || *block_count == 0 {
                    return Err(Error::invalid("attn dims must be positive"));
                }
                if token_count * token_dim != self.input_dim {
                    return Err(Error::invalid(format!(
                        "token_count x token_dim = {} but input_dim = {}",
                        token_count * token_dim,
                        self.input_dim
                    )));
                }
            }
        }
        Ok(())
    }

    /// Records the configuration in snapshot metadata.
    pub fn write_meta(&self, snapshot: &mut WeightSnapshot) -> Result<()> {
        snapshot.set_meta(KEY_INPUT, self.input_dim.to_string())?;
        snapshot.set_meta(KEY_FEATURE, self.feature_dim.to_string())?;
        match &self.arch {
            Architecture::Mlp { hidden_dims } => {
                snapshot.set_meta(KEY_ARCH, "mlp")?;
                let dims: Vec<String> = hidden_dims.iter().map(|d| d.to_string()).collect();
                snapshot.set_meta(KEY_HIDDEN, dims.join(","))?;
            }
            Architecture::Attn {
                token_count,
                token_dim,
                block_count,
            } => {
                snapshot.set_meta(KEY_ARCH, "attn")?;
                snapshot.set_meta(KEY_TOKENS, token_count.to_string())?;
                snapshot.set_meta(KEY_TOKEN_DIM, token_dim.to_string())?;
                snapshot.set_meta(KEY_BLOCKS, block_count.to_string())?;
            }
        }
        Ok(())
    }

    /// Reads a configuration written by [`ModelConfig::write_meta`].
    pub fn from_meta(snapshot: &WeightSnapshot) -> Result<Self> {
        let get = |k: &str| {
            snapshot
                .meta_value(k)
                .ok_or_else(|| Error::Compatibility(format!("snapshot metadata lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Compatibility(format!("bad {k} in metadata")))
        };
        let config = match get(KEY_ARCH)? {
            "mlp" => {
                let raw = get(KEY_HIDDEN)?;
                let hidden_dims = if raw.is_empty() {
                    Vec::new()
                } else {
                    raw.split(',')
                        .map(|d| d.parse())
                        .collect::<std::result::Result<Vec<usize>, _>>()
                        .map_err(|_| Error::Compatibility(format!("bad {KEY_HIDDEN} in metadata")))?
                };
                ModelConfig::mlp(num(KEY_INPUT)?, hidden_dims, num(KEY_FEATURE)?)
            }
            "attn" => ModelConfig {
                input_dim: num(KEY_INPUT)?,
                arch: Architecture::Attn {
                    token_count: num(KEY_TOKENS)?,
                    token_dim: num(KEY_TOKEN_DIM)?,
                    block_count: num(KEY_BLOCKS)?,
                },
                feature_dim: num(KEY_FEATURE)?,
            },
            other => return Err(Error::Compatibility(format!("unknown architecture {other:?}"))),
        };
        config.validate()?;
        Ok(config)
    }

    /// Encoder parameter paths and shapes, in creation order.
    pub fn encoder_layout(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        match &self.arch {
            Architecture::Mlp { hidden_dims } => {
                let mut fan_in = self.input_dim;
                let widths = hidden_dims.iter().copied().chain(std::iter::once(self.feature_dim));
                for (i, fan_out) in widths.enumerate() {
                    out.push(ParamSpec::dense_weight(format!("encoder.layer{i}.weight"), fan_out, fan_in));
                    out.push(ParamSpec::zeros(format!("encoder.layer{i}.bias"), vec![fan_out]));
                    fan_in = fan_out;
                }
            }
            Architecture::Attn {
                token_count,
                token_dim,
                block_count,
            } => {
                let d = *token_dim;
                out.push(ParamSpec::zeros("encoder.token_bias".into(), vec![*token_count, d]));
                for b in 0..*block_count {
                    let p = format!("encoder.block{b}");
                    out.push(ParamSpec::ones(format!("{p}.ln1.gamma"), vec![d]));
                    out.push(ParamSpec::zeros(format!("{p}.ln1.beta"), vec![d]));
                    for name in ["query", "key", "value", "output"] {
                        out.push(ParamSpec::dense_weight(format!("{p}.attn.{name}"), d, d));
                    }
                    out.push(ParamSpec::ones(format!("{p}.ln2.gamma"), vec![d]));
                    out.push(ParamSpec::zeros(format!("{p}.ln2.beta"), vec![d]));
                    out.push(ParamSpec::dense_weight(format!("{p}.mlp.fc1.weight"), 2 * d, d));
                    out.push(ParamSpec::zeros(format!("{p}.mlp.fc1.bias"), vec![2 * d]));
                    out.push(ParamSpec::dense_weight(format!("{p}.mlp.fc2.weight"), d, 2 * d));
                    out.push(ParamSpec::zeros(format!("{p}.mlp.fc2.bias"), vec![d]));
                }
                out.push(ParamSpec::ones("encoder.final_ln.gamma".into(), vec![d]));
                out.push(ParamSpec::zeros("encoder.final_ln.beta".into(), vec![d]));
                out.push(ParamSpec::dense_weight("encoder.proj.weight".into(), self.feature_dim, d));
                out.push(ParamSpec::zeros("encoder.proj.bias".into(), vec![self.feature_dim]));
            }
        }
        out
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
    /// `N(0, std^2)`
    Normal(f32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub(crate) fn dense_weight(path: String, fan_out: usize, fan_in: usize) -> Self {
        ParamSpec {
            path,
            shape: vec![fan_out, fan_in],
            init: Init::Xavier { fan_in, fan_out },
        }
    }

    pub(crate) fn zeros(path: String, shape: Vec<usize>) -> Self {
        ParamSpec {
            path,
            shape,
            init: Init::Zeros,
        }
    }

    pub(crate) fn ones(path: String, shape: Vec<usize>) -> Self {
        ParamSpec {
            path,
            shape,
            init: Init::Ones,
        }
    }
}
