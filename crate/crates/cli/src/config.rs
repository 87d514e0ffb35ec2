//! Run configuration: a versioned TOML document with fail-closed parsing
//! (unknown keys are errors).

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use qni_core::optics::{DetectorGrid, Dims, ImagingSystem, ObjectModel};
use qni_core::phantom::Phantom;
use qni_core::source::SourceModel;
use qni_core::swm::{PipelineConfig, SolverConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub object_distance_mm: f64,
    pub image_distance_mm: f64,
    pub lens_radius_mm: f64,
    pub wavelength_nm: f64,
    pub detector_pitch_um: f64,
    /// explicit grid, [n] or [nx, ny]; omitted = covering grid from the margin
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_dims: Option<Vec<usize>>,
    /// object-plane margin of the covering grid, micrometres
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_margin_um: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceBlock {
    pub kind: String,
    pub correlation_width_um: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectBlock {
    /// bundled phantom name
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<String>,
    /// CSV file of transmissions, one value per line (row-major for 2D)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub pixel_size_um: f64,
    pub pixel_count: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub order: usize,
    pub events: u64,
    pub seed: u64,
    /// image-plane tuple diameter cap; omitted = 2 Rayleigh widths (image side)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuple_cap_um: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
}

fn default_max_iters() -> usize {
    SolverConfig::<f64>::default().max_iters
}
fn default_grad_tol() -> f64 {
    SolverConfig::<f64>::default().grad_tol
}
fn default_step_tol() -> f64 {
    SolverConfig::<f64>::default().step_tol
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            step_tol: default_step_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowBlock {
    #[serde(default = "default_core")]
    pub core: usize,
    /// 0 selects the automatic bandwidth-derived border
    #[serde(default)]
    pub border: usize,
    /// 0 selects the Rayleigh width
    #[serde(default)]
    pub margin_um: f64,
    #[serde(default = "default_rho_star")]
    pub rho_star: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_change_tol")]
    pub sweep_change_tol: f64,
    #[serde(default)]
    pub stride_one_refine: bool,
}

fn default_core() -> usize {
    6
}
fn default_rho_star() -> f64 {
    qni_core::fisher::DOMINANCE_THRESHOLD
}
fn default_max_sweeps() -> usize {
    20
}
fn default_change_tol() -> f64 {
    1e-4
}

impl Default for WindowBlock {
    fn default() -> Self {
        Self {
            core: default_core(),
            border: 0,
            margin_um: 0.0,
            rho_star: default_rho_star(),
            max_sweeps: default_max_sweeps(),
            sweep_change_tol: default_change_tol(),
            stride_one_refine: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// "crb" or "infidelity"
    pub metric: String,
    /// "truth" (default) or "uniform"
    #[serde(default = "default_eval")]
    pub eval: String,
    /// explicit grid in micrometres, strictly increasing
    pub grid_um: Vec<f64>,
    /// seeds for the infidelity metric
    #[serde(default)]
    pub seeds: Vec<u64>,
}

fn default_eval() -> String {
    "truth".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub geometry: GeometryBlock,
    pub source: SourceBlock,
    pub object: ObjectBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub window: WindowBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).context("parsing config")?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            bail!("unsupported config schema version {}", cfg.schema_version);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.object.phantom.is_some() == self.object.file.is_some() {
            bail!("object block needs exactly one of 'phantom' or 'file'");
        }
        if self.object.pixel_count.is_empty() || self.object.pixel_count.len() > 2 {
            bail!("pixel_count must have one or two entries");
        }
        if !(self.object.pixel_size_um > 0.0) {
            bail!("pixel_size_um must be positive");
        }
        if self.run.order == 0 || self.run.events == 0 {
            bail!("run order and events must be positive");
        }
        Ok(())
    }

    pub fn system(&self) -> Result<ImagingSystem<f64>> {
        Ok(ImagingSystem::new(
            self.geometry.object_distance_mm,
            self.geometry.image_distance_mm,
            self.geometry.lens_radius_mm,
            self.geometry.wavelength_nm,
        )?)
    }

    pub fn source(&self) -> Result<SourceModel<f64>> {
        match self.source.kind.as_str() {
            "thermal" => Ok(SourceModel::thermal(self.source.correlation_width_um)?),
            "spdc" => Ok(SourceModel::spdc(self.source.correlation_width_um)?),
            other => bail!("unknown source kind '{other}' (thermal | spdc)"),
        }
    }

    pub fn dims(&self) -> Dims {
        match self.object.pixel_count.as_slice() {
            [m] => Dims::D1(*m),
            [mx, my] => Dims::D2(*mx, *my),
            _ => unreachable!("validated"),
        }
    }

    pub fn object(&self, config_dir: &Path) -> Result<ObjectModel<f64>> {
        let dims = self.dims();
        if let Some(name) = &self.object.phantom {
            let phantom = Phantom::from_name(name)?;
            return Ok(phantom.render(dims, self.object.pixel_size_um)?);
        }
        let rel = self.object.file.as_ref().expect("validated");
        let path = config_dir.join(rel);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading object file {}", path.display()))?;
        let x: Vec<f64> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.parse::<f64>().context("object file value"))
            .collect::<Result<_>>()?;
        Ok(ObjectModel::centered(dims, self.object.pixel_size_um, x)?)
    }

    pub fn detectors(&self, obj: &ObjectModel<f64>, sys: &ImagingSystem<f64>) -> Result<DetectorGrid<f64>> {
        if let Some(dims) = &self.geometry.detector_dims {
            let d = match dims.as_slice() {
                [n] => Dims::D1(*n),
                [nx, ny] => Dims::D2(*nx, *ny),
                _ => bail!("detector_dims must have one or two entries"),
            };
            return Ok(DetectorGrid::centered(d, self.geometry.detector_pitch_um)?);
        }
        let margin = self
            .geometry
            .detector_margin_um
            .unwrap_or(2.0 * sys.rayleigh_width_um());
        Ok(DetectorGrid::covering(obj, sys, margin, self.geometry.detector_pitch_um)?)
    }

    pub fn tuple_cap_um(&self, sys: &ImagingSystem<f64>) -> f64 {
        self.run
            .tuple_cap_um
            .unwrap_or(2.0 * sys.rayleigh_width_um() * sys.magnification())
    }

    pub fn pipeline(&self, sys: &ImagingSystem<f64>) -> PipelineConfig<f64> {
        let mut pc = PipelineConfig::new(self.tuple_cap_um(sys));
        pc.core = self.window.core;
        pc.border = (self.window.border > 0).then_some(self.window.border);
        pc.margin_um = (self.window.margin_um > 0.0).then_some(self.window.margin_um);
        pc.rho_star = self.window.rho_star;
        pc.max_sweeps = self.window.max_sweeps;
        pc.sweep_change_tol = self.window.sweep_change_tol;
        pc.stride_one_refine = self.window.stride_one_refine;
        pc.solver = SolverConfig {
            max_iters: self.solver.max_iters,
            grad_tol: self.solver.grad_tol,
            step_tol: self.solver.step_tol,
            ..SolverConfig::default()
        };
        pc
    }
}
