//! Run configuration: one JSON document, complex numbers as `[re, im]`.

use std::path::Path;

use bers::classical::Quadrature;
use bers::kernels::KernelConfig;
use bers::schottky::SchottkyData;
use bers::varops::{FdScheme, VariationConfig};
use bers::Cx;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub surface: SurfaceSpec,
    #[serde(default = "one")]
    pub weight: usize,
    /// Kernel anchors given as limit points; omitted means the default
    /// anchors for the weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_points: Option<Vec<Cx>>,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub variation: VariationSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub eval: EvalSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    /// Optional cross-check against the number of handles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genus: Option<usize>,
    pub handles: Vec<HandleSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandleSpec {
    pub repelling: Cx,
    pub attracting: Cx,
    pub multiplier: Cx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub modes: usize,
    pub word_len: usize,
    /// Product cutoff for the determinant; omitted means the tail bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            modes: bers::sewing::DEFAULT_MODES,
            word_len: 6,
            m_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub circle_nodes: usize,
    pub gl_order: usize,
    pub tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        let q = Quadrature::default();
        Self {
            circle_nodes: q.circle_nodes,
            gl_order: q.gl_order,
            tol: q.tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Central2,
    Central4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationSpec {
    pub h: f64,
    pub scheme: Scheme,
    pub levels: usize,
    /// Probe sets for the identity suite.
    pub probes: usize,
}

impl Default for VariationSpec {
    fn default() -> Self {
        let v = VariationConfig::default();
        Self {
            h: v.h_w,
            scheme: match v.scheme {
                FdScheme::Central2 => Scheme::Central2,
                FdScheme::Central4 => Scheme::Central4,
            },
            levels: v.levels,
            probes: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Evaluation points `x`.
    #[serde(default)]
    pub points: Vec<Cx>,
    /// Second point `y` for two-point quantities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Cx>,
}

fn one() -> usize {
    1
}

#[derive(Debug)]
pub enum ConfigError {
    /// Unreadable or malformed document (exit 1).
    Parse(String),
    /// Well-formed but describes no valid surface (exit 2).
    Invalid(String),
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            ConfigError::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let hs = &self.surface.handles;
        if hs.is_empty() {
            return bad("surface needs at least one handle".into());
        }
        if let Some(g) = self.surface.genus {
            if g != hs.len() {
                return bad(format!("genus {g} but {} handles", hs.len()));
            }
        }
        let finite = |z: &Cx| z.re.is_finite() && z.im.is_finite();
        for (i, h) in hs.iter().enumerate() {
            if ![h.repelling, h.attracting, h.multiplier].iter().all(finite) {
                return bad(format!("handle {} has a non-finite entry", i + 1));
            }
            let q = h.multiplier.norm();
            if !(q > 0.0 && q < 1.0) {
                return bad(format!("handle {} has |q| = {q} outside (0, 1)", i + 1));
            }
        }
        let more = self
            .limit_points
            .iter()
            .flatten()
            .chain(&self.eval.points)
            .chain(&self.eval.base);
        if !more.into_iter().all(finite) {
            return bad("non-finite point".into());
        }
        if self.weight == 0 {
            return bad("weight must be at least 1".into());
        }
        if self.truncation.modes == 0 {
            return bad("modes must be positive".into());
        }
        let v = &self.variation;
        if !(v.h.is_finite() && v.h > 0.0) || v.levels == 0 {
            return bad("variation step must be positive with at least one level".into());
        }
        if !(self.quadrature.tol.is_finite() && self.quadrature.tol > 0.0) {
            return bad("quadrature tolerance must be positive".into());
        }
        Ok(())
    }

    pub fn schottky(&self) -> bers::Result<SchottkyData> {
        let t: Vec<_> = self
            .surface
            .handles
            .iter()
            .map(|h| (h.repelling, h.attracting, h.multiplier))
            .collect();
        SchottkyData::from_fixed_points(&t)
    }

    pub fn kernel(&self, s: &SchottkyData, weight: usize) -> bers::Result<KernelConfig> {
        match (&self.limit_points, weight) {
            (Some(p), w) if w == self.weight && w > 1 => KernelConfig::from_limit_points(s, w, p),
            _ => KernelConfig::standard(s, weight),
        }
    }

    pub fn quadrature(&self) -> Quadrature {
        Quadrature {
            circle_nodes: self.quadrature.circle_nodes,
            gl_order: self.quadrature.gl_order,
            tol: self.quadrature.tol,
            ..Quadrature::default()
        }
    }

    pub fn variation(&self) -> VariationConfig {
        let v = &self.variation;
        VariationConfig {
            scheme: match v.scheme {
                Scheme::Central2 => FdScheme::Central2,
                Scheme::Central4 => FdScheme::Central4,
            },
            h_w: v.h,
            h_rho: v.h,
            h_y: v.h,
            levels: v.levels,
            modes: self.truncation.modes,
            ..VariationConfig::default()
        }
    }
}
