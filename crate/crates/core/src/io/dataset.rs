//! Dataset files: a TOML document with geometry header, source and object
//! blocks, the detector tuple table, and the frequency table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::measurement::{MeasurementSet, TupleSet};
use crate::optics::{DetectorGrid, Dims, ImagingSystem, ObjectModel};
use crate::source::{SourceKind, SourceModel};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub object_distance_mm: f64,
    pub image_distance_mm: f64,
    pub lens_radius_mm: f64,
    pub wavelength_nm: f64,
    pub detector_pitch_um: f64,
    /// [n] for a line, [nx, ny] for a raster; detectors form a centred grid
    pub detector_dims: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub kind: String,
    pub correlation_width_um: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObjectSection {
    pub pixel_size_um: f64,
    pub dims: Vec<usize>,
    pub origin_um: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub order: usize,
    pub events: u64,
    pub seed: u64,
    pub tuple_cap_um: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub tuples: Vec<Vec<usize>>,
    pub frequencies: Vec<f64>,
    pub no_count_frequency: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub schema_version: u32,
    pub geometry: GeometrySection,
    pub source: SourceSection,
    pub object: ObjectSection,
    pub run: RunSection,
    pub data: DataSection,
}

fn dims_from_vec(v: &[usize]) -> Result<Dims> {
    match v {
        [m] => Ok(Dims::D1(*m)),
        [mx, my] => Ok(Dims::D2(*mx, *my)),
        _ => Err(CoreError::Format("dims must have one or two entries".into())),
    }
}

fn dims_to_vec(d: Dims) -> Vec<usize> {
    match d {
        Dims::D1(m) => vec![m],
        Dims::D2(a, b) => vec![a, b],
    }
}

impl DatasetFile {
    pub fn assemble(
        sys: &ImagingSystem<f64>,
        src: &SourceModel<f64>,
        obj: &ObjectModel<f64>,
        det: &DetectorGrid<f64>,
        data: &MeasurementSet<f64>,
        tuple_cap_um: f64,
        include_truth: bool,
    ) -> Self {
        DatasetFile {
            schema_version: DATASET_SCHEMA_VERSION,
            geometry: GeometrySection {
                object_distance_mm: sys.object_distance_um() / 1e3,
                image_distance_mm: sys.image_distance_um() / 1e3,
                lens_radius_mm: sys.lens_radius_um() / 1e3,
                wavelength_nm: sys.wavelength_um() * 1e3,
                detector_pitch_um: det.pitch_um,
                detector_dims: dims_to_vec(det.dims),
            },
            source: SourceSection {
                kind: src.kind().name().to_string(),
                correlation_width_um: src.correlation_width_um(),
            },
            object: ObjectSection {
                pixel_size_um: obj.pixel_size_um,
                dims: dims_to_vec(obj.dims),
                origin_um: obj.origin_um,
                truth: include_truth.then(|| obj.transmissions().to_vec()),
            },
            run: RunSection {
                order: data.order,
                events: data.events,
                seed: data.seed,
                tuple_cap_um,
            },
            data: DataSection {
                tuples: data.tuples.tuples().to_vec(),
                frequencies: data.frequencies.clone(),
                no_count_frequency: data.no_count_frequency,
            },
        }
    }

    pub fn system(&self) -> Result<ImagingSystem<f64>> {
        ImagingSystem::new(
            self.geometry.object_distance_mm,
            self.geometry.image_distance_mm,
            self.geometry.lens_radius_mm,
            self.geometry.wavelength_nm,
        )
    }

    pub fn source(&self) -> Result<SourceModel<f64>> {
        match self.source.kind.as_str() {
            "thermal" => SourceModel::thermal(self.source.correlation_width_um),
            "spdc" => SourceModel::spdc(self.source.correlation_width_um),
            other => Err(CoreError::Format(format!("unknown source kind '{other}'"))),
        }
    }

    pub fn source_kind(&self) -> Result<SourceKind> {
        Ok(self.source()?.kind())
    }

    pub fn detectors(&self) -> Result<DetectorGrid<f64>> {
        DetectorGrid::centered(dims_from_vec(&self.geometry.detector_dims)?, self.geometry.detector_pitch_um)
    }

    /// The object grid; transmissions are the stored truth or 0.5 placeholders.
    pub fn object_grid(&self) -> Result<ObjectModel<f64>> {
        let dims = dims_from_vec(&self.object.dims)?;
        let x = match &self.object.truth {
            Some(t) => t.clone(),
            None => vec![0.5; dims.len()],
        };
        ObjectModel::new(dims, self.object.pixel_size_um, self.object.origin_um, x)
    }

    pub fn measurement(&self) -> Result<MeasurementSet<f64>> {
        let tuples = TupleSet::from_tuples(self.run.order, self.data.tuples.clone())?;
        MeasurementSet::new(
            tuples,
            self.data.frequencies.clone(),
            self.data.no_count_frequency,
            self.run.events,
            self.run.seed,
        )
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoreError::Format(format!("dataset encode: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: DatasetFile =
            toml::from_str(text).map_err(|e| CoreError::Format(format!("dataset decode: {e}")))?;
        if file.schema_version != DATASET_SCHEMA_VERSION {
            return Err(CoreError::Format(format!(
                "unsupported dataset schema version {}",
                file.schema_version
            )));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}
