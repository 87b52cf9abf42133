//! Declarative network description and its JSON form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARCH_CONFIG_VERSION: u32 = 1;

/// How plain blocks are wired together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// Dense blocks (concatenated shortcuts) interleaved with transition blocks.
    Concat,
    /// Residual blocks: identity shortcut added around each plain block.
    Add,
    /// Plain blocks stacked with no shortcuts.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub size: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            size: 2,
            stride: 1,
            padding: Padding::Same,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub enabled: bool,
    /// Projection width `d`.
    pub width: usize,
    /// Learned `W_q/W_k/W_v`; when off, `Q = K = V = x`.
    pub projections: bool,
    /// Divide scores by `sqrt(d)`.
    pub scaled: bool,
}

impl AttentionConfig {
    pub fn disabled() -> Self {
        AttentionConfig {
            enabled: false,
            width: 0,
            projections: true,
            scaled: true,
        }
    }

    pub fn with_width(width: usize) -> Self {
        AttentionConfig {
            enabled: true,
            width,
            projections: true,
            scaled: true,
        }
    }
}

/// Full description of a network. `blocks` means dense blocks under
/// `concat` connectivity and residual/plain blocks otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub version: u32,
    /// Encoded feature count; each feature is one sequence position.
    pub input_width: usize,
    pub stem_width: usize,
    /// Plain blocks per dense block; only meaningful with `concat`.
    #[serde(default)]
    pub growth_rate: Option<usize>,
    #[serde(alias = "dense_blocks")]
    pub blocks: usize,
    pub kernel_size: usize,
    pub pool: PoolConfig,
    pub dropout_rate: f64,
    pub attention: AttentionConfig,
    pub connectivity: Connectivity,
    pub classes: usize,
}

pub const DEFAULT_DROPOUT: f64 = 0.4;
pub const DEFAULT_KERNEL: usize = 3;

impl ArchitectureConfig {
    fn base(input_width: usize, stem_width: usize, blocks: usize, connectivity: Connectivity, classes: usize) -> Self {
        ArchitectureConfig {
            version: ARCH_CONFIG_VERSION,
            input_width,
            stem_width,
            growth_rate: None,
            blocks,
            kernel_size: DEFAULT_KERNEL,
            pool: PoolConfig::default(),
            dropout_rate: DEFAULT_DROPOUT,
            attention: AttentionConfig::disabled(),
            connectivity,
            classes,
        }
    }

    /// Dense-n: `n` dense blocks of growth rate `k` with `n - 1` transitions.
    pub fn dense(input_width: usize, stem_width: usize, n: usize, k: usize, classes: usize) -> Self {
        let mut cfg = Self::base(input_width, stem_width, n, Connectivity::Concat, classes);
        cfg.growth_rate = Some(k);
        cfg
    }

    /// Residual-n.
    pub fn residual(input_width: usize, stem_width: usize, n: usize, classes: usize) -> Self {
        Self::base(input_width, stem_width, n, Connectivity::Add, classes)
    }

    /// n plain blocks without shortcuts.
    pub fn plain_stack(input_width: usize, stem_width: usize, n: usize, classes: usize) -> Self {
        Self::base(input_width, stem_width, n, Connectivity::None, classes)
    }

    /// Dense-n with self-attention of width `d` ahead of pooling.
    pub fn dualnet(input_width: usize, stem_width: usize, n: usize, k: usize, d: usize, classes: usize) -> Self {
        Self::dense(input_width, stem_width, n, k, classes).with_attention(d)
    }

    /// Smallest useful DualNet: stem 8, one dense block with k = 2, attention width 8.
    pub fn dualnet_tiny(input_width: usize, classes: usize) -> Self {
        Self::dualnet(input_width, 8, 1, 2, 8, classes)
    }

    pub fn with_attention(mut self, width: usize) -> Self {
        self.attention = AttentionConfig::with_width(width);
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_pool(mut self, size: usize, stride: usize) -> Self {
        self.pool = PoolConfig {
            size,
            stride,
            padding: Padding::Same,
        };
        self
    }

    /// Total plain blocks, counting transitions.
    pub fn plain_block_count(&self) -> usize {
        match self.connectivity {
            Connectivity::Concat => {
                let k = self.growth_rate.unwrap_or(0);
                self.blocks * k + self.blocks.saturating_sub(1)
            }
            Connectivity::Add | Connectivity::None => self.blocks,
        }
    }

    /// Whether every layer keeps one sequence position per input feature.
    pub fn preserves_length(&self) -> bool {
        self.pool.stride == 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.version != ARCH_CONFIG_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "architecture config",
                found: self.version,
                supported: ARCH_CONFIG_VERSION,
            });
        }
        if self.input_width == 0 || self.stem_width == 0 {
            return fail("input_width and stem_width must be positive".into());
        }
        if self.blocks == 0 {
            return fail("blocks must be at least 1".into());
        }
        match (self.connectivity, self.growth_rate) {
            (Connectivity::Concat, None) => return fail("concat connectivity needs a growth_rate".into()),
            (Connectivity::Concat, Some(0)) => return fail("growth_rate must be at least 1".into()),
            (Connectivity::Add, Some(_)) => {
                return fail("add connectivity cannot be used inside dense blocks; drop growth_rate".into())
            }
            (Connectivity::None, Some(_)) => return fail("growth_rate requires concat connectivity".into()),
            _ => {}
        }
        if self.kernel_size.is_multiple_of(2) {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.pool.size == 0 || self.pool.stride == 0 {
            return fail("pool size and stride must be positive".into());
        }
        if self.pool.stride != 1 && self.connectivity != Connectivity::None {
            return fail("shortcut connections need length-preserving pooling (stride 1)".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.attention.enabled && self.attention.projections && self.attention.width == 0 {
            return fail("attention width must be positive".into());
        }
        if self.classes < 2 {
            return fail(format!("classes must be at least 2, got {}", self.classes));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ArchitectureConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical (compact) JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        crate::digest::sha256_hex(&bytes)
    }

    /// Short human-readable name such as `Dense-3`, `DualNet-3`, `Residual-8`.
    pub fn label(&self) -> String {
        match self.connectivity {
            Connectivity::Concat if self.attention.enabled => format!("DualNet-{}", self.blocks),
            Connectivity::Concat => format!("Dense-{}", self.blocks),
            Connectivity::Add => format!("Residual-{}", self.blocks),
            Connectivity::None => format!("PlainStack-{}", self.blocks),
        }
    }
}
