//! Dense lead field matrices: the linear map from source coefficients to
//! sensor measurements, with enough metadata to label exported files.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// What the rows of a lead field measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorKind {
    /// Magnetometer readings (tesla).
    Magnetometer,
    /// Contact electrode potentials (volt).
    Electrode,
}

/// What the columns of a lead field represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    /// Tangential point-dipole components on a planar grid (A·m).
    PlanarDipole,
    /// Raviart-Thomas face currents on a tetrahedral mesh (A).
    RaviartThomas,
}

/// Dense L×K measurement operator with sensor and source-space metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadField {
    pub matrix: DMatrix<f64>,
    pub sensor_kind: SensorKind,
    pub source_kind: SourceKind,
    /// Measurement units of one matrix entry per unit coefficient.
    pub units: String,
}

impl LeadField {
    pub fn new(
        matrix: DMatrix<f64>,
        sensor_kind: SensorKind,
        source_kind: SourceKind,
        units: impl Into<String>,
    ) -> Self {
        Self {
            matrix,
            sensor_kind,
            source_kind,
            units: units.into(),
        }
    }

    /// Bare matrix wrapper for synthetic test systems.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        Self::new(
            matrix,
            SensorKind::Magnetometer,
            SourceKind::PlanarDipole,
            "arbitrary",
        )
    }

    pub fn n_sensors(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_coefficients(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, alpha: &DVector<f64>) -> DVector<f64> {
        &self.matrix * alpha
    }
}
