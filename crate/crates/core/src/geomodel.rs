//! Object-based channel realisations and the facies-to-property transform.
//!
//! Channel bodies are half discs with the flat side up (depth `z` grows
//! downwards). A cell belongs to a body when its centre `(x, z)`, measured in
//! cell units, lies inside the half disc.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{write_record, FormatError, Grid2};

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid geomodel configuration: {0}")]
    InvalidConfig(String),
    #[error("grid dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("facies value {value} at cell {cell} outside [0, 1]")]
    OutOfRange { cell: usize, value: f64 },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeoConfig {
    pub nx: usize,
    pub nz: usize,
    /// Inclusive range of channel bodies per realisation.
    pub channel_count: (u32, u32),
    /// Radius range in cell units.
    pub radius: (f64, f64),
    pub seed: u64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self { nx: 128, nz: 64, channel_count: (5, 15), radius: (4.0, 16.0), seed: 0 }
    }
}

impl GeoConfig {
    /// 32×16 lattice with radii scaled down by the same factor as the grid.
    pub fn desk() -> Self {
        Self { nx: 32, nz: 16, channel_count: (5, 15), radius: (1.0, 4.0), seed: 0 }
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let mut bad = Vec::new();
        if self.nx == 0 || self.nz == 0 {
            bad.push("grid dimensions must be positive".to_string());
        }
        if self.channel_count.0 > self.channel_count.1 {
            bad.push("channel_count range is reversed".to_string());
        }
        let (r0, r1) = self.radius;
        if !(r0 > 0.0 && r1 >= r0 && r1.is_finite()) {
            bad.push(format!("radius range [{r0}, {r1}] must be positive and ordered"));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(GeoError::InvalidConfig(bad.join("; ")))
        }
    }

    /// Independent random stream for realisation `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// Half disc with its flat side on the row `z = cz`, extending to larger `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfDisc {
    pub cx: f64,
    pub cz: f64,
    pub radius: f64,
}

impl HalfDisc {
    #[inline]
    pub fn contains(&self, x: f64, z: f64) -> bool {
        let dx = x - self.cx;
        let dz = z - self.cz;
        dz >= 0.0 && dx * dx + dz * dz <= self.radius * self.radius
    }
}

/// Per-cell sand indicator or sand probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaciesGrid(Grid2);

impl FaciesGrid {
    pub fn new(grid: Grid2) -> Result<Self, GeoError> {
        if let Some((cell, &value)) =
            grid.as_slice().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(GeoError::OutOfRange { cell, value });
        }
        Ok(Self(grid))
    }

    pub fn shale(nx: usize, nz: usize) -> Self {
        Self(Grid2::zeros(nx, nz))
    }

    pub fn grid(&self) -> &Grid2 {
        &self.0
    }

    pub fn into_grid(self) -> Grid2 {
        self.0
    }

    pub fn sand_fraction(&self) -> f64 {
        self.0.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PropertyTransform {
    /// Dimensionless permeability offset.
    pub a: f64,
    /// Permeability scale in m².
    pub b: f64,
    /// Porosity scale.
    pub c: f64,
    /// Porosity offset.
    pub d: f64,
}

impl Default for PropertyTransform {
    fn default() -> Self {
        Self { a: 1.0e-3, b: 1.0e-12, c: 0.3, d: 0.1 }
    }
}

impl PropertyTransform {
    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.b > 0.0) || !(self.c >= 0.0) || !(self.d > 0.0) || !(self.c + self.d < 1.0) || !(self.a >= 0.0) {
            return Err(GeoError::InvalidConfig(format!("property transform {self:?} out of range")));
        }
        Ok(())
    }

    #[inline]
    pub fn permeability(&self, prob: f64) -> f64 {
        (self.a + prob) * self.b
    }

    #[inline]
    pub fn porosity(&self, driver: f64) -> f64 {
        self.c * driver + self.d
    }
}

/// Facies probability with the derived permeability (m²) and porosity fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrid {
    pub facies: Grid2,
    pub permeability: Grid2,
    pub porosity: Grid2,
}

impl ModelGrid {
    pub fn nx(&self) -> usize {
        self.facies.nx()
    }

    pub fn nz(&self) -> usize {
        self.facies.nz()
    }

    /// Uniform model with facies value `prob`, e.g. `1.0` for all sand.
    pub fn homogeneous(nx: usize, nz: usize, prob: f64, t: &PropertyTransform) -> Self {
        let facies = Grid2::filled(nx, nz, prob);
        Self {
            permeability: facies.map(|p| t.permeability(p)),
            porosity: facies.map(|p| t.porosity(p)),
            facies,
        }
    }
}

pub fn sample_channels<R: Rng + ?Sized>(config: &GeoConfig, rng: &mut R) -> Vec<HalfDisc> {
    let (lo, hi) = config.channel_count;
    let count = rng.random_range(lo..=hi);
    let (r0, r1) = config.radius;
    (0..count)
        .map(|_| HalfDisc {
            cx: rng.random::<f64>() * config.nx as f64,
            cz: rng.random::<f64>() * config.nz as f64,
            radius: if r1 > r0 { rng.random_range(r0..r1) } else { r0 },
        })
        .collect()
}

/// Marks every cell whose centre lies inside `disc`.
pub fn rasterize(grid: &mut Grid2, disc: &HalfDisc) {
    let nx = grid.nx();
    let nz = grid.nz();
    let x0 = (disc.cx - disc.radius).floor().max(0.0) as usize;
    let x1 = ((disc.cx + disc.radius).ceil().max(0.0) as usize).min(nx.saturating_sub(1));
    let z0 = disc.cz.ceil().max(0.0) as usize;
    let z1 = ((disc.cz + disc.radius).ceil().max(0.0) as usize).min(nz.saturating_sub(1));
    for x in x0..=x1 {
        for z in z0..=z1 {
            if disc.contains(x as f64, z as f64) {
                grid.set(x, z, 1.0);
            }
        }
    }
}

/// Binary channel realisation; deterministic in the state of `rng`.
pub fn sample_realization<R: Rng + ?Sized>(config: &GeoConfig, rng: &mut R) -> FaciesGrid {
    let mut grid = Grid2::zeros(config.nx, config.nz);
    for disc in sample_channels(config, rng) {
        rasterize(&mut grid, &disc);
    }
    FaciesGrid(grid)
}

/// Realisation `index` of the configured seed.
pub fn realization(config: &GeoConfig, index: u64) -> FaciesGrid {
    sample_realization(config, &mut config.stream(index))
}

/// Object-based grids use the facies indicator as porosity driver.
pub fn facies_to_properties(prob: &FaciesGrid, t: &PropertyTransform) -> ModelGrid {
    let facies = prob.grid().clone();
    ModelGrid {
        permeability: facies.map(|p| t.permeability(p)),
        porosity: facies.map(|p| t.porosity(p)),
        facies,
    }
}

/// Builds a model from separate facies and porosity-driver channels.
pub fn channels_to_properties(
    prob: &FaciesGrid,
    porosity_driver: &Grid2,
    t: &PropertyTransform,
) -> Result<ModelGrid, GeoError> {
    if !prob.grid().same_shape(porosity_driver) {
        return Err(GeoError::DimensionMismatch(format!(
            "facies {}x{} vs porosity driver {}x{}",
            prob.grid().nx(),
            prob.grid().nz(),
            porosity_driver.nx(),
            porosity_driver.nz()
        )));
    }
    let facies = prob.grid().clone();
    Ok(ModelGrid {
        permeability: facies.map(|p| t.permeability(p)),
        porosity: porosity_driver.map(|x| t.porosity(x)),
        facies,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub sand_fraction_mean: f64,
    pub sand_fraction_std: f64,
}

/// Writes `n` realisations as two-channel records (facies, porosity driver).
pub fn export_dataset<W: Write>(config: &GeoConfig, n: usize, mut sink: W) -> Result<DatasetSummary, GeoError> {
    config.validate()?;
    if n == 0 {
        return Err(GeoError::InvalidConfig("dataset size must be positive".into()));
    }
    let grids: Vec<FaciesGrid> = (0..n as u64).into_par_iter().map(|i| realization(config, i)).collect();
    let mut fractions = Vec::with_capacity(n);
    for g in &grids {
        write_record(&mut sink, &[g.grid(), g.grid()])?;
        fractions.push(g.sand_fraction());
    }
    sink.flush().map_err(FormatError::from)?;
    let mean = fractions.iter().sum::<f64>() / n as f64;
    let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(DatasetSummary { count: n, sand_fraction_mean: mean, sand_fraction_std: var.sqrt() })
}
