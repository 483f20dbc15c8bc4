use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GraphConfig, GridSpacing};

/// Decoder wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// One fold of the primitive grid.
    FoldingNet,
    /// Two folds with independent parameters, the second taking 3D input.
    CascadedF,
    /// Fold, tear, fold again, then graph-filter.
    TearingNet,
    /// Tear the grid directly (zeros in the 3D slot), fold, filter.
    #[serde(rename = "TearingNet_TF")]
    TearingNetTf,
    /// TearingNet without the graph filter.
    #[serde(rename = "TearingNet_noGF")]
    TearingNetNoGf,
    /// Fold, tear, fold, tear, fold, then filter.
    TearingNet3,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::FoldingNet,
        Variant::CascadedF,
        Variant::TearingNet,
        Variant::TearingNetTf,
        Variant::TearingNetNoGf,
        Variant::TearingNet3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FoldingNet => "FoldingNet",
            Variant::CascadedF => "CascadedF",
            Variant::TearingNet => "TearingNet",
            Variant::TearingNetTf => "TearingNet_TF",
            Variant::TearingNetNoGf => "TearingNet_noGF",
            Variant::TearingNet3 => "TearingNet3",
        }
    }

    pub fn has_tear(self) -> bool {
        matches!(
            self,
            Variant::TearingNet | Variant::TearingNetTf | Variant::TearingNetNoGf | Variant::TearingNet3
        )
    }

    pub fn graph_filter(self) -> bool {
        matches!(
            self,
            Variant::TearingNet | Variant::TearingNetTf | Variant::TearingNet3
        )
    }

    /// Number of fold evaluations in one decode.
    pub fn folds(self) -> usize {
        match self {
            Variant::FoldingNet | Variant::TearingNetTf => 1,
            Variant::CascadedF | Variant::TearingNet | Variant::TearingNetNoGf => 2,
            Variant::TearingNet3 => 3,
        }
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
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::invalid(format!("unknown variant `{s}` (known: {})", known.join(", ")))
            })
    }
}

/// The variant tag together with the switches it implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: Variant,
    pub graph_filter: bool,
    pub iterations: usize,
}

impl VariantConfig {
    pub fn of(variant: Variant) -> Self {
        Self {
            variant,
            graph_filter: variant.graph_filter(),
            iterations: variant.folds(),
        }
    }

    /// The tag fixes the wiring; the switches must agree with it.
    pub fn validate(&self) -> Result<()> {
        let want = Self::of(self.variant);
        if *self != want {
            return Err(Error::invalid(format!(
                "{} runs {} fold(s) with the graph filter {}; got iterations={} filter={}",
                self.variant,
                want.iterations,
                if want.graph_filter { "on" } else { "off" },
                self.iterations,
                self.graph_filter
            )));
        }
        Ok(())
    }
}

impl From<Variant> for VariantConfig {
    fn from(v: Variant) -> Self {
        Self::of(v)
    }
}

/// Architecture and decoder settings; stored in every checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: VariantConfig,
    /// Codeword length `d`.
    pub code_dim: usize,
    /// Per-point encoder widths, applied before max-pooling.
    pub encoder_widths: Vec<usize>,
    /// Hidden widths of the post-pool MLP (its output width is `code_dim`).
    pub encoder_head: Vec<usize>,
    /// Hidden widths of each fold stage.
    pub fold_hidden: Vec<usize>,
    /// Hidden widths of each tear stage.
    pub tear_hidden: Vec<usize>,
    /// Output width of the first tear stage.
    pub tear_mid: usize,
    pub grid_dim: usize,
    #[serde(default)]
    pub spacing: GridSpacing,
    pub graph: GraphConfig,
    /// Graph filter strength.
    pub lambda: f64,
}

impl ModelConfig {
    /// The reference architecture: d = 512 on a 45 x 45 grid.
    pub fn full(variant: Variant) -> Self {
        Self {
            variant: variant.into(),
            code_dim: 512,
            encoder_widths: vec![64, 128, 1024],
            encoder_head: vec![512],
            fold_hidden: vec![512, 512],
            tear_hidden: vec![512, 512],
            tear_mid: 64,
            grid_dim: 45,
            spacing: GridSpacing::EndpointInclusive,
            graph: GraphConfig::default(),
            lambda: 0.5,
        }
    }

    /// CPU-sized preset: d = 128, 23 x 23 grid, hidden widths quartered.
    /// The kernel width scales with the grid step so that grid edges carry
    /// the same weight as on the 45 x 45 grid.
    pub fn desk(variant: Variant) -> Self {
        let full = Self::full(variant);
        let step_ratio = full.spacing.step(23) / full.spacing.step(45);
        Self {
            graph: GraphConfig {
                eps: full.graph.eps * step_ratio,
                ..full.graph
            },
            code_dim: 128,
            encoder_widths: vec![16, 32, 256],
            encoder_head: vec![128],
            fold_hidden: vec![128, 128],
            tear_hidden: vec![128, 128],
            tear_mid: 16,
            grid_dim: 23,
            ..full
        }
    }

    /// Gradient-check preset with a handful of units per layer. The kernel
    /// is widened so grid edges keep non-negligible weights on the 4 x 4 grid.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            code_dim: 8,
            encoder_widths: vec![6, 10, 12],
            encoder_head: vec![10],
            fold_hidden: vec![9, 9],
            tear_hidden: vec![9, 9],
            tear_mid: 4,
            grid_dim: 4,
            graph: GraphConfig {
                eps: 0.3,
                ..GraphConfig::default()
            },
            ..Self::full(variant)
        }
    }

    pub fn preset(name: &str, variant: Variant) -> Result<Self> {
        match name {
            "full" => Ok(Self::full(variant)),
            "desk" => Ok(Self::desk(variant)),
            "tiny" => Ok(Self::tiny(variant)),
            other => Err(Error::invalid(format!(
                "unknown model preset `{other}` (known: tiny, desk, full)"
            ))),
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant: variant.into(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        self.graph.validate()?;
        let nonzero = |what: &str, w: &[usize]| {
            if w.is_empty() || w.contains(&0) {
                Err(Error::invalid(format!("{what} must be non-empty and positive, got {w:?}")))
            } else {
                Ok(())
            }
        };
        nonzero("encoder widths", &self.encoder_widths)?;
        nonzero("fold hidden widths", &self.fold_hidden)?;
        nonzero("tear hidden widths", &self.tear_hidden)?;
        if self.encoder_head.contains(&0) {
            return Err(Error::invalid("encoder head widths must be positive"));
        }
        if self.code_dim == 0 || self.tear_mid == 0 {
            return Err(Error::invalid("code_dim and tear_mid must be positive"));
        }
        if self.grid_dim < 2 {
            return Err(Error::invalid(format!(
                "grid dimension must be >= 2, got {}",
                self.grid_dim
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Input width of each tear stage: `2 + 3 + d` by default.
    pub fn tear_input_width(&self) -> usize {
        2 + 3 + self.code_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for v in Variant::ALL {
            for name in ["tiny", "desk", "full"] {
                ModelConfig::preset(name, v).unwrap().validate().unwrap();
            }
        }
        assert_eq!(ModelConfig::full(Variant::TearingNet).tear_input_width(), 517);
        assert!(ModelConfig::preset("huge", Variant::FoldingNet).is_err());
        assert!((ModelConfig::desk(Variant::TearingNet).graph.eps - 0.04).abs() < 1e-12);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("Folding".parse::<Variant>().is_err());
    }

    #[test]
    fn illegal_wiring_rejected() {
        let mut v = VariantConfig::of(Variant::FoldingNet);
        v.graph_filter = true;
        assert!(v.validate().is_err());
        let mut v = VariantConfig::of(Variant::TearingNet);
        v.iterations = 5;
        assert!(v.validate().is_err());
    }
}
