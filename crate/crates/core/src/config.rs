//! Whole-pipeline configuration, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationParams;
use crate::error::{Error, Result};
use crate::focus::FocusParams;
use crate::optical_flow::FlowParams;
use crate::viz::OverlayStyle;

/// Which per-frame artifacts `process` writes besides predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputToggles {
    pub overlay: bool,
    /// Colour-coded raw and compensated flow.
    pub flow: bool,
    /// Camera-motion magnitude maps.
    pub eps: bool,
    pub mask: bool,
    /// Per-pair diagnostics as JSON lines.
    pub diag: bool,
    /// Four-cell comparison panel.
    pub panel: bool,
}

impl OutputToggles {
    pub const NAMES: [&'static str; 6] = ["overlay", "flow", "eps", "mask", "diag", "panel"];

    pub fn enable(&mut self, name: &str) -> Result<()> {
        let slot = match name {
            "overlay" => &mut self.overlay,
            "flow" => &mut self.flow,
            "eps" => &mut self.eps,
            "mask" => &mut self.mask,
            "diag" => &mut self.diag,
            "panel" => &mut self.panel,
            other => {
                return Err(Error::Config(format!(
                    "unknown output `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *slot = true;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Processing size `[width, height]`; frames are resized to it. Unset
    /// means native size.
    pub size: Option<[usize; 2]>,
    /// Pixel stride of the correspondences fed to the rigid fit.
    pub stride: usize,
    pub flow: FlowParams,
    pub focus: FocusParams,
    pub aggregation: AggregationParams,
    pub output: OutputToggles,
    pub style: OverlayStyle,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            size: None,
            stride: 1,
            flow: FlowParams::default(),
            focus: FocusParams::default(),
            aggregation: AggregationParams::default(),
            output: OutputToggles::default(),
            style: OverlayStyle::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride < 1 {
            return Err(Error::InvalidParams("correspondence stride must be >= 1".into()));
        }
        if let Some([w, h]) = self.size {
            let min = crate::frame_io::MIN_FRAME_SIDE;
            if w < min || h < min {
                return Err(Error::InvalidParams(format!("size {w}x{h} below {min}x{min}")));
            }
        }
        self.flow.validate()?;
        self.focus.validate()?;
        self.aggregation.validate()?;
        self.style.validate()
    }

    pub fn size_tuple(&self) -> Option<(usize, usize)> {
        self.size.map(|[w, h]| (w, h))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    /// Reads a TOML config, or the `config` object of a run manifest when
    /// the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if !is_json {
            return Self::from_toml_str(&text);
        }
        let doc: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let inner = doc
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Config(format!("{}: no `config` object", path.display())))?;
        let cfg: Self = serde_json::from_value(inner)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.size = Some([320, 240]);
        cfg.focus.clusters = 2;
        cfg.output.enable("mask").unwrap();
        let back = PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = PipelineConfig::from_toml_str("stride = 4\n[aggregation]\nwindow = 5\n").unwrap();
        assert_eq!(cfg.stride, 4);
        assert_eq!(cfg.aggregation.window, 5);
        assert_eq!(cfg.flow, FlowParams::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml_str("strid = 4\n").is_err());
        assert!(PipelineConfig::from_toml_str("[focus]\nk = 2\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_toml_str("stride = 0\n").is_err());
        assert!(PipelineConfig::from_toml_str("[style]\nalpha = 1.5\n").is_err());
        assert!(PipelineConfig::default().output.clone().enable("video").is_err());
    }
}
