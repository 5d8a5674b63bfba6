use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which of the ablation architectures to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Fine-scale regression only.
    R,
    /// Fine-scale classification only.
    C,
    /// Coarse regression cascaded into fine regression.
    #[serde(rename = "RRCN")]
    Rrcn,
    /// Coarse regression cascaded into fine classification.
    #[serde(rename = "RCCN")]
    Rccn,
    /// Coarse classification cascaded into fine classification.
    #[serde(rename = "CCCN")]
    Cccn,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::R, Variant::C, Variant::Rrcn, Variant::Rccn, Variant::Cccn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::R => "R",
            Variant::C => "C",
            Variant::Rrcn => "RRCN",
            Variant::Rccn => "RCCN",
            Variant::Cccn => "CCCN",
        }
    }

    /// Has the fully-connected coarse branch and the deconvolution bridge.
    pub fn has_coarse_branch(self) -> bool {
        matches!(self, Variant::Rrcn | Variant::Rccn | Variant::Cccn)
    }

    pub fn coarse_is_classifier(self) -> bool {
        self == Variant::Cccn
    }

    pub fn fine_is_classifier(self) -> bool {
        matches!(self, Variant::C | Variant::Rccn | Variant::Cccn)
    }

    /// Has the refinement and fusion networks (cascades with a discrete fine head).
    pub fn has_post_refinement(self) -> bool {
        matches!(self, Variant::Rccn | Variant::Cccn)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

/// A run of same-width convolutions followed by an optional max pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub convs: usize,
    pub channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub pool: Option<PoolSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub name: String,
    pub channels: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeconvSpec {
    pub name: String,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Layer plan for the cascade. Channel counts follow the VGG-based reference
/// table divided by `channel_divisor`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_height: usize,
    pub input_width: usize,
    /// Number of depth classes `K` (channels of the discrete heads).
    pub bins: usize,
    pub variant: Variant,
    pub channel_divisor: usize,
    /// b1–b3.
    pub shared: Vec<BlockSpec>,
    /// r1–r2.
    pub regression: Vec<BlockSpec>,
    /// Widths of the fully-connected layers r3–r4.
    pub fc: Vec<usize>,
    /// Deconvolution carrying the coarse map into the fine branch.
    pub bridge: DeconvSpec,
    /// c1–c2.
    pub classification: Vec<BlockSpec>,
    /// c3–c4; the head c5 is implied by the variant.
    pub classifier: Vec<ConvSpec>,
    /// c'1–c'3.
    pub refinement: Vec<BlockSpec>,
    /// Deconvolution lifting c5 outputs to the refinement grid.
    pub refine_bridge: DeconvSpec,
    /// c'4–c'6; the head c'7 emits `bins` channels.
    pub refine_convs: Vec<ConvSpec>,
    pub fusion_layers: usize,
    pub fusion_channels: usize,
}

fn pool2() -> Option<PoolSpec> {
    Some(PoolSpec {
        window: 2,
        stride: 2,
        padding: 0,
    })
}

impl NetworkSpec {
    /// The reference topology with every channel count divided by
    /// `channel_divisor` (minimum 1). A divisor of 8 is the desk-scale plan.
    pub fn scaled(input_height: usize, input_width: usize, bins: usize, channel_divisor: usize, variant: Variant) -> Self {
        let ch = |c: usize| (c / channel_divisor.max(1)).max(1);
        let block = |name: &str, convs, channels, dilation, pool| BlockSpec {
            name: name.into(),
            convs,
            channels: ch(channels),
            kernel: 3,
            dilation,
            pool,
        };
        let same_size_pool = Some(PoolSpec {
            window: 3,
            stride: 1,
            padding: 1,
        });
        NetworkSpec {
            input_height,
            input_width,
            bins,
            variant,
            channel_divisor,
            shared: vec![
                block("b1", 2, 64, 1, pool2()),
                block("b2", 2, 128, 1, pool2()),
                block("b3", 3, 256, 1, pool2()),
            ],
            regression: vec![block("r1", 3, 512, 1, pool2()), block("r2", 3, 512, 1, pool2())],
            fc: vec![ch(2048), ch(2048)],
            bridge: DeconvSpec {
                name: "de".into(),
                channels: ch(512),
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            classification: vec![
                block("c1", 3, 512, 1, same_size_pool),
                block("c2", 3, 512, 2, same_size_pool),
            ],
            classifier: vec![
                ConvSpec {
                    name: "c3".into(),
                    channels: ch(2048),
                    kernel: 3,
                },
                ConvSpec {
                    name: "c4".into(),
                    channels: ch(2048),
                    kernel: 1,
                },
            ],
            refinement: vec![
                block("rf1", 2, 64, 1, pool2()),
                block("rf2", 2, 128, 1, pool2()),
                block("rf3", 3, 256, 1, None),
            ],
            refine_bridge: DeconvSpec {
                name: "rf_de".into(),
                channels: ch(256),
                kernel: 4,
                stride: 2,
                padding: 1,
            },
            refine_convs: vec![
                ConvSpec {
                    name: "rf4".into(),
                    channels: ch(1024),
                    kernel: 3,
                },
                ConvSpec {
                    name: "rf5".into(),
                    channels: ch(1024),
                    kernel: 3,
                },
                ConvSpec {
                    name: "rf6".into(),
                    channels: ch(1024),
                    kernel: 1,
                },
            ],
            fusion_layers: 3,
            fusion_channels: 32,
        }
    }

    /// Desk-scale plan: reference channels divided by 8.
    pub fn desk(input_height: usize, input_width: usize, bins: usize, variant: Variant) -> Self {
        Self::scaled(input_height, input_width, bins, 8, variant)
    }

    /// Coarse/fine grid (input / 8).
    pub fn coarse_size(&self) -> (usize, usize) {
        (self.input_height / 8, self.input_width / 8)
    }

    /// Refinement and fusion grid (input / 4).
    pub fn refine_size(&self) -> (usize, usize) {
        (self.input_height / 4, self.input_width / 4)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.bins == 0 {
            return bad("bins (K) must be >= 1".into());
        }
        if self.input_height == 0 || self.input_width == 0 || self.input_height % 8 != 0 || self.input_width % 8 != 0 {
            return bad(format!(
                "input {}×{} must be a positive multiple of 8",
                self.input_height, self.input_width
            ));
        }
        if self.variant.has_coarse_branch() && (self.input_height < 32 || self.input_width < 32) {
            return bad("the fully-connected branch pools to /32 and needs inputs of at least 32×32".into());
        }
        let blocks = self.shared.iter().chain(&self.regression).chain(&self.classification).chain(&self.refinement);
        for b in blocks {
            if b.convs == 0 || b.channels == 0 || b.kernel % 2 == 0 || b.dilation == 0 {
                return bad(format!("block {} needs convs, channels >= 1 and an odd kernel", b.name));
            }
        }
        let strides = |blocks: &[BlockSpec]| -> usize {
            blocks.iter().map(|b| b.pool.map_or(1, |p| p.stride)).product()
        };
        if self.shared.len() != 3 || strides(&self.shared) != 8 {
            return bad("shared blocks must be b1–b3 reducing resolution by 8".into());
        }
        if strides(&self.classification) != 1 {
            return bad("classification blocks must keep the /8 resolution".into());
        }
        if self.refinement.len() != 3 || strides(&self.refinement) != 4 {
            return bad("refinement blocks must reach /4 resolution".into());
        }
        if self.fc.is_empty() || self.fc.contains(&0) {
            return bad("fully-connected widths must be positive".into());
        }
        if self.classifier.iter().chain(&self.refine_convs).any(|c| c.channels == 0 || c.kernel % 2 == 0) {
            return bad("classifier convolutions need channels >= 1 and odd kernels".into());
        }
        if self.fusion_layers < 2 || self.fusion_channels == 0 {
            return bad("fusion needs at least two layers and one channel".into());
        }
        if self.refine_bridge.stride != 2
            || self.refine_bridge.kernel != 2 * self.refine_bridge.padding + 2
        {
            return bad("refinement bridge must exactly double the /8 grid".into());
        }
        if self.bridge.stride != 1 || self.bridge.kernel != 2 * self.bridge.padding + 1 {
            return bad("coarse bridge must preserve the /8 grid".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_plan_divides_channels_by_eight() {
        let s = NetworkSpec::desk(64, 64, 40, Variant::Rccn);
        assert_eq!(s.shared[0].channels, 8);
        assert_eq!(s.classifier[0].channels, 256);
        assert_eq!(s.bridge.channels, 64);
        assert_eq!(s.refine_bridge.channels, 32);
        assert_eq!(s.coarse_size(), (8, 8));
        s.validate().unwrap();
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = NetworkSpec::desk(64, 64, 0, Variant::Rccn);
        assert!(s.validate().is_err());
        s.bins = 4;
        s.input_height = 60;
        assert!(s.validate().is_err());
        let small = NetworkSpec::desk(16, 16, 4, Variant::Rccn);
        assert!(small.validate().is_err());
        assert!(NetworkSpec::desk(16, 16, 4, Variant::C).validate().is_ok());
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
    }
}
