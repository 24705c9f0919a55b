//! Half-space magnetic forward model: vertical magnetometers above a
//! layered grid of tangential point dipoles, with volume currents ignored.
//!
//! A magnetometer at x with orientation e₃ sees, from a dipole component
//! e_j at y with amplitude α,
//!
//! ```text
//! b = (μ₀/4π) e₃·(e_j × (x − y)) / |x − y|³ · α
//! ```
//!
//! The lead field stacks all e₁ coefficients first and all e₂ coefficients
//! second, so coefficient i and i+K address the two tangential components
//! of dipole i and share one variance group.

use nalgebra::{DMatrix, DVector, Unit, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hypermodel::VarianceGrouping;
use crate::leadfield::{LeadField, SensorKind, SourceKind};

/// μ₀/4π in SI units.
pub const MU0_OVER_4PI: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum PlanarError {
    #[error("sensor {sensor} coincides with dipole {dipole}")]
    CoincidentSensorDipole { sensor: usize, dipole: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("zero signal with positive noise fraction; sigma undefined")]
    ZeroSignal,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("geometry i/o: {0}")]
    Io(String),
}

/// Rectangular array of magnetometers with a common orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGrid {
    pub positions: Vec<Vector3<f64>>,
    pub orientation: Unit<Vector3<f64>>,
}

impl SensorGrid {
    pub fn new(positions: Vec<Vector3<f64>>, orientation: Vector3<f64>) -> Self {
        Self {
            positions,
            orientation: Unit::new_normalize(orientation),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Layered lattice of dipole locations with a shared tangent basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleGrid {
    pub locations: Vec<Vector3<f64>>,
    pub e1: Unit<Vector3<f64>>,
    pub e2: Unit<Vector3<f64>>,
    /// Depth (meters, positive downward) of each layer.
    pub layer_depths: Vec<f64>,
    /// Layer index of each dipole location.
    pub layer_of: Vec<usize>,
}

impl DipoleGrid {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Variance grouping pairing the two tangential components of every
    /// dipole, matching the lead field column layout.
    pub fn grouping(&self) -> VarianceGrouping {
        VarianceGrouping::paired(self.len())
    }

    /// Depth of the layer containing dipole `k`.
    pub fn depth_of(&self, k: usize) -> f64 {
        self.layer_depths[self.layer_of[k]]
    }
}

/// Builds the L×2K lead field matrix over the dipole grid.
pub fn build_planar_leadfield(
    sensors: &SensorGrid,
    dipoles: &DipoleGrid,
) -> Result<LeadField, PlanarError> {
    let l = sensors.len();
    let k = dipoles.len();
    let mut m = DMatrix::zeros(l, 2 * k);
    let e3 = sensors.orientation.into_inner();
    let basis = [dipoles.e1.into_inner(), dipoles.e2.into_inner()];
    for (li, x) in sensors.positions.iter().enumerate() {
        for (ki, y) in dipoles.locations.iter().enumerate() {
            let d = x - y;
            let dist = d.norm();
            if dist == 0.0 {
                return Err(PlanarError::CoincidentSensorDipole {
                    sensor: li,
                    dipole: ki,
                });
            }
            let inv_d3 = 1.0 / (dist * dist * dist);
            for (j, ej) in basis.iter().enumerate() {
                m[(li, ki + j * k)] = MU0_OVER_4PI * e3.dot(&ej.cross(&d)) * inv_d3;
            }
        }
    }
    Ok(LeadField::new(
        m,
        SensorKind::Magnetometer,
        SourceKind::PlanarDipole,
        "T per A·m",
    ))
}

/// Noiseless or noisy synthetic data: σ = noise_fraction · max|Mα| and
/// b = Mα (+ σ·N(0,1) per sensor when `add_noise`).
pub fn simulate_data(
    m: &LeadField,
    alpha_true: &DVector<f64>,
    noise_fraction: f64,
    add_noise: bool,
    seed: u64,
) -> Result<(DVector<f64>, f64), PlanarError> {
    if alpha_true.len() != m.n_coefficients() {
        return Err(PlanarError::DimensionMismatch(format!(
            "lead field has {} columns, alpha has {}",
            m.n_coefficients(),
            alpha_true.len()
        )));
    }
    if noise_fraction < 0.0 {
        return Err(PlanarError::DimensionMismatch(
            "noise fraction must be nonnegative".into(),
        ));
    }
    let mut b = m.apply(alpha_true);
    let peak = b.amax();
    let sigma = noise_fraction * peak;
    if noise_fraction > 0.0 && peak == 0.0 {
        return Err(PlanarError::ZeroSignal);
    }
    if add_noise && sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in b.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    Ok((b, sigma))
}

/// The unit of the simulated dipole moment (A·m) in the benchmark setup.
pub const REFERENCE_SOURCE_MOMENT: f64 = 1.0;

/// Geometry and ground truth of the half-space benchmark.
#[derive(Debug, Clone)]
pub struct PlanarSetup {
    pub sensors: SensorGrid,
    pub dipoles: DipoleGrid,
    /// Index of the true dipole location.
    pub true_dipole: usize,
    /// Tangential components (e₁, e₂) of the true dipole moment.
    pub true_components: [f64; 2],
    /// Variance-group indices of the cylindrical region of interest.
    pub roi_groups: Vec<usize>,
}

impl PlanarSetup {
    /// Coefficient vector of the true source, sized to the lead field.
    pub fn true_alpha(&self) -> DVector<f64> {
        let k = self.dipoles.len();
        let mut alpha = DVector::zeros(2 * k);
        alpha[self.true_dipole] = self.true_components[0];
        alpha[self.true_dipole + k] = self.true_components[1];
        alpha
    }
}

/// The reference half-space benchmark: a 10×10 array of vertical
/// magnetometers 2 cm above the surface with 1 cm spacing, nine dipole
/// layers from depth 0 to 4 cm in steps of 0.5 cm (each a 10×10 lattice
/// below the magnetometers), a unit tangential dipole at 3.5 cm depth at
/// the lattice point nearest the grid center, and a 6×6-column ROI
/// cylinder around it (9·6·6 = 324 dipoles).
pub fn reference_setup() -> PlanarSetup {
    let n = 10;
    let spacing = 0.01;
    let sensor_height = 0.02;
    let lattice: Vec<f64> = (0..n)
        .map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) * spacing)
        .collect();

    let sensors = SensorGrid::new(
        lattice
            .iter()
            .flat_map(|&y| {
                lattice
                    .iter()
                    .map(move |&x| Vector3::new(x, y, sensor_height))
            })
            .collect(),
        Vector3::z(),
    );

    let layer_depths: Vec<f64> = (0..9).map(|i| 0.005 * i as f64).collect();
    let mut locations = Vec::with_capacity(9 * n * n);
    let mut layer_of = Vec::with_capacity(9 * n * n);
    for (li, &depth) in layer_depths.iter().enumerate() {
        for &y in &lattice {
            for &x in &lattice {
                locations.push(Vector3::new(x, y, -depth));
                layer_of.push(li);
            }
        }
    }
    let dipoles = DipoleGrid {
        locations,
        e1: Unit::new_normalize(Vector3::x()),
        e2: Unit::new_normalize(Vector3::y()),
        layer_depths,
        layer_of,
    };

    // Lattice point nearest the grid center on the 3.5 cm layer.
    let true_depth = 0.035;
    let true_xy = 0.5 * spacing;
    let true_dipole = dipoles
        .locations
        .iter()
        .enumerate()
        .filter(|(_, p)| (p.z + true_depth).abs() < 1e-12)
        .min_by(|(_, a), (_, b)| {
            let da = (a.x - true_xy).hypot(a.y - true_xy);
            let db = (b.x - true_xy).hypot(b.y - true_xy);
            da.partial_cmp(&db).unwrap()
        })
        .map(|(i, _)| i)
        .expect("3.5 cm layer exists");

    // 6×6 columns around the true source, all nine layers.
    let center = dipoles.locations[true_dipole];
    let half = 3.0 * spacing;
    let roi_groups: Vec<usize> = dipoles
        .locations
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            (p.x - center.x).abs() < half - 1e-12 && (p.y - center.y).abs() < half - 1e-12
        })
        .map(|(i, _)| i)
        .collect();
    debug_assert_eq!(roi_groups.len(), 324);

    PlanarSetup {
        sensors,
        dipoles,
        true_dipole,
        true_components: [REFERENCE_SOURCE_MOMENT, 0.0],
        roi_groups,
    }
}

// ---------------------------------------------------------------------------
// Geometry documents
// ---------------------------------------------------------------------------

/// JSON-serializable snapshot of a planar experiment geometry, so runs can
/// be reproduced from files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanarGeometryDoc {
    pub sensor_positions: Vec<[f64; 3]>,
    pub sensor_orientation: [f64; 3],
    pub dipole_locations: Vec<[f64; 3]>,
    pub e1: [f64; 3],
    pub e2: [f64; 3],
    pub layer_depths: Vec<f64>,
    pub layer_of: Vec<usize>,
    pub true_dipole: usize,
    pub true_components: [f64; 2],
    pub roi_groups: Vec<usize>,
}

fn to_array(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn from_array(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl From<&PlanarSetup> for PlanarGeometryDoc {
    fn from(s: &PlanarSetup) -> Self {
        Self {
            sensor_positions: s.sensors.positions.iter().map(to_array).collect(),
            sensor_orientation: to_array(&s.sensors.orientation),
            dipole_locations: s.dipoles.locations.iter().map(to_array).collect(),
            e1: to_array(&s.dipoles.e1),
            e2: to_array(&s.dipoles.e2),
            layer_depths: s.dipoles.layer_depths.clone(),
            layer_of: s.dipoles.layer_of.clone(),
            true_dipole: s.true_dipole,
            true_components: s.true_components,
            roi_groups: s.roi_groups.clone(),
        }
    }
}

impl TryFrom<&PlanarGeometryDoc> for PlanarSetup {
    type Error = PlanarError;

    fn try_from(doc: &PlanarGeometryDoc) -> Result<Self, PlanarError> {
        let k = doc.dipole_locations.len();
        if doc.layer_of.len() != k {
            return Err(PlanarError::InvalidGeometry(format!(
                "layer_of has {} entries for {} dipoles",
                doc.layer_of.len(),
                k
            )));
        }
        if let Some(&bad) = doc.layer_of.iter().find(|&&l| l >= doc.layer_depths.len()) {
            return Err(PlanarError::InvalidGeometry(format!(
                "layer index {bad} out of range"
            )));
        }
        if doc.true_dipole >= k {
            return Err(PlanarError::InvalidGeometry(format!(
                "true dipole index {} out of range",
                doc.true_dipole
            )));
        }
        if let Some(&bad) = doc.roi_groups.iter().find(|&&g| g >= k) {
            return Err(PlanarError::InvalidGeometry(format!(
                "roi group {bad} out of range"
            )));
        }
        Ok(Self {
            sensors: SensorGrid::new(
                doc.sensor_positions.iter().copied().map(from_array).collect(),
                from_array(doc.sensor_orientation),
            ),
            dipoles: DipoleGrid {
                locations: doc.dipole_locations.iter().copied().map(from_array).collect(),
                e1: Unit::new_normalize(from_array(doc.e1)),
                e2: Unit::new_normalize(from_array(doc.e2)),
                layer_depths: doc.layer_depths.clone(),
                layer_of: doc.layer_of.clone(),
            },
            true_dipole: doc.true_dipole,
            true_components: doc.true_components,
            roi_groups: doc.roi_groups.clone(),
        })
    }
}

pub fn save_geometry(path: &std::path::Path, setup: &PlanarSetup) -> Result<(), PlanarError> {
    let doc = PlanarGeometryDoc::from(setup);
    let json = serde_json::to_string_pretty(&doc).map_err(|e| PlanarError::Io(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| PlanarError::Io(e.to_string()))
}

pub fn load_geometry(path: &std::path::Path) -> Result<PlanarSetup, PlanarError> {
    let json = std::fs::read_to_string(path).map_err(|e| PlanarError::Io(e.to_string()))?;
    let doc: PlanarGeometryDoc =
        serde_json::from_str(&json).map_err(|e| PlanarError::Io(e.to_string()))?;
    PlanarSetup::try_from(&doc)
}
