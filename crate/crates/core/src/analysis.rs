//! Ensemble diagnostics: thresholded facies statistics, injector–producer
//! connectivity, histograms and spherical interpolation between latents.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::LatentVector;
use crate::flowsim::WellSpec;
use crate::grid::Grid2;
use crate::inversion::{InversionError, InversionProblem, LossBreakdown, Scenario};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty input")]
    Empty,
    #[error("grid shapes differ")]
    ShapeMismatch,
    #[error("interpolation needs non-zero, non-antiparallel latents (leg {leg})")]
    DegenerateArc { leg: usize },
    #[error("latent dimensions differ")]
    DimensionMismatch,
    #[error("evaluation of point {index} failed: {source}")]
    Evaluation { index: usize, source: InversionError },
}

/// `1` where `prob > tau`, else `0`.
pub fn threshold_facies(prob: &Grid2, tau: f64) -> Grid2 {
    prob.map(|p| if p > tau { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighbourhood {
    /// Edge neighbours only.
    #[default]
    Four,
    /// Edge and corner neighbours.
    Eight,
}

/// Connected sand components; `labels[i]` is `0` for shale and `1..=count` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Label and size of the largest component (lowest label on ties).
    pub fn largest(&self) -> Option<(u32, usize)> {
        let mut best: Option<(u32, usize)> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i as u32 + 1, s));
            }
        }
        best
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Union-find labelling of cells with value above 0.5; labels follow grid order.
pub fn label_components(binary: &Grid2, nb: Neighbourhood) -> Components {
    let (nx, nz) = (binary.nx(), binary.nz());
    let sand = |x: usize, z: usize| binary.get(x, z) > 0.5;
    let mut parent: Vec<usize> = (0..nx * nz).collect();
    let union = |parent: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    };
    for x in 0..nx {
        for z in 0..nz {
            if !sand(x, z) {
                continue;
            }
            let i = x * nz + z;
            let mut link = |xx: usize, zz: usize| {
                if sand(xx, zz) {
                    union(&mut parent, i, xx * nz + zz);
                }
            };
            if x + 1 < nx {
                link(x + 1, z);
            }
            if z + 1 < nz {
                link(x, z + 1);
            }
            if nb == Neighbourhood::Eight && x + 1 < nx {
                if z + 1 < nz {
                    link(x + 1, z + 1);
                }
                if z > 0 {
                    link(x + 1, z - 1);
                }
            }
        }
    }
    let mut labels = vec![0u32; nx * nz];
    let mut root_label = vec![0u32; nx * nz];
    let mut sizes = Vec::new();
    for i in 0..nx * nz {
        if binary.as_slice()[i] <= 0.5 {
            continue;
        }
        let r = find(&mut parent, i);
        if root_label[r] == 0 {
            sizes.push(0);
            root_label[r] = sizes.len() as u32;
        }
        labels[i] = root_label[r];
        sizes[root_label[r] as usize - 1] += 1;
    }
    Components { labels, sizes }
}

/// Sets every cell within the 3×3 neighbourhood of a marked cell.
pub fn dilate(mask: &Grid2) -> Grid2 {
    let (nx, nz) = (mask.nx(), mask.nz());
    Grid2::from_fn(nx, nz, |x, z| {
        let hit = (x.saturating_sub(1)..=(x + 1).min(nx - 1))
            .any(|xx| (z.saturating_sub(1)..=(z + 1).min(nz - 1)).any(|zz| mask.get(xx, zz) > 0.5));
        if hit {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConnectivityOptions {
    pub neighbourhood: Neighbourhood,
    /// 3×3 dilation passes applied to the largest cluster.
    pub dilation_passes: usize,
}

impl Default for ConnectivityOptions {
    fn default() -> Self {
        Self { neighbourhood: Neighbourhood::Four, dilation_passes: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub connected_raw: bool,
    pub connected_after_dilation: bool,
    pub largest_cluster_size: usize,
}

fn wells_joined(c: &Components, wells: &WellSpec, nz: usize) -> bool {
    let (r0, r1) = wells.completion_rows;
    let touched = |col: usize| -> Vec<u32> {
        let mut v: Vec<u32> = (r0..r1.min(nz)).map(|z| c.labels[col * nz + z]).filter(|&l| l > 0).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let inj = touched(wells.injector_column);
    touched(wells.producer_column).iter().any(|l| inj.binary_search(l).is_ok())
}

/// Whether one sand component touches both completed well columns, before and
/// after dilating the largest component.
pub fn well_connectivity(binary: &Grid2, wells: &WellSpec, opts: &ConnectivityOptions) -> ConnectivityReport {
    let nz = binary.nz();
    let comps = label_components(binary, opts.neighbourhood);
    let connected_raw = wells_joined(&comps, wells, nz);
    let Some((label, size)) = comps.largest() else {
        return ConnectivityReport { connected_raw, connected_after_dilation: connected_raw, largest_cluster_size: 0 };
    };
    let mut cluster = Grid2::from_vec(
        binary.nx(),
        nz,
        comps.labels.iter().map(|&l| if l == label { 1.0 } else { 0.0 }).collect(),
    )
    .expect("shape");
    for _ in 0..opts.dilation_passes {
        cluster = dilate(&cluster);
    }
    let merged = Grid2::from_vec(
        binary.nx(),
        nz,
        binary.as_slice().iter().zip(cluster.as_slice()).map(|(&a, &b)| if a > 0.5 || b > 0.5 { 1.0 } else { 0.0 }).collect(),
    )
    .expect("shape");
    let after = wells_joined(&label_components(&merged, opts.neighbourhood), wells, nz);
    ConnectivityReport { connected_raw, connected_after_dilation: connected_raw || after, largest_cluster_size: size }
}

/// Per-cell mean and population standard deviation of thresholded grids.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: Grid2,
    pub std: Grid2,
}

pub fn ensemble_stats(probs: &[Grid2], tau: f64) -> Result<EnsembleStats, AnalysisError> {
    let first = probs.first().ok_or(AnalysisError::Empty)?;
    if probs.iter().any(|g| !g.same_shape(first)) {
        return Err(AnalysisError::ShapeMismatch);
    }
    let n = probs.len() as f64;
    let mut sum = vec![0.0; first.len()];
    let mut sq = vec![0.0; first.len()];
    for g in probs {
        for (i, &p) in g.as_slice().iter().enumerate() {
            let b = if p > tau { 1.0 } else { 0.0 };
            sum[i] += b;
            sq[i] += b * b;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt()).collect();
    Ok(EnsembleStats {
        mean: Grid2::from_vec(first.nx(), first.nz(), mean).expect("shape"),
        std: Grid2::from_vec(first.nx(), first.nz(), std).expect("shape"),
    })
}

/// Spherical interpolation along the great circle through `a` and `b`.
pub fn slerp(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::DimensionMismatch);
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(AnalysisError::DegenerateArc { leg: 0 });
    }
    let cos = (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    if std::f64::consts::PI - omega < 1e-9 {
        return Err(AnalysisError::DegenerateArc { leg: 0 });
    }
    if omega < 1e-12 {
        return Ok(a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect());
    }
    let s = omega.sin();
    let (wa, wb) = (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s);
    Ok(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
}

/// `n_per_leg` points `t = i / n_per_leg` on every leg `z_k → z_{k+1}`, closing back to `z_0`.
pub fn slerp_cycle(points: &[LatentVector], n_per_leg: usize) -> Result<Vec<LatentVector>, AnalysisError> {
    if points.len() < 2 || n_per_leg == 0 {
        return Err(AnalysisError::Empty);
    }
    let mut out = Vec::with_capacity(points.len() * n_per_leg);
    for leg in 0..points.len() {
        let a = points[leg].as_slice();
        let b = points[(leg + 1) % points.len()].as_slice();
        for i in 0..n_per_leg {
            let t = i as f64 / n_per_leg as f64;
            let p = slerp(a, b, t).map_err(|e| match e {
                AnalysisError::DegenerateArc { .. } => AnalysisError::DegenerateArc { leg },
                other => other,
            })?;
            out.push(LatentVector(p));
        }
    }
    Ok(out)
}

/// Scenario losses along a latent sequence, evaluated in parallel.
pub fn evaluate_interpolation(
    problem: &InversionProblem,
    sequence: &[LatentVector],
    scenario: Scenario,
) -> Result<Vec<(LossBreakdown, f64)>, AnalysisError> {
    sequence
        .par_iter()
        .enumerate()
        .map(|(index, z)| {
            problem
                .evaluate(z, scenario, false)
                .map(|e| (e.loss, e.accuracy))
                .map_err(|source| AnalysisError::Evaluation { index, source })
        })
        .collect()
}

/// Equal-width histogram over `[lo, hi]`; values outside are clamped into the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Self, AnalysisError> {
        if values.is_empty() || bins == 0 {
            return Err(AnalysisError::Empty);
        }
        let (lo, hi) = range.unwrap_or_else(|| {
            values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
        });
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0; bins];
        for &v in values {
            let k = ((v - lo) / width).floor();
            let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(bins - 1) };
            counts[k] += 1;
        }
        Ok(Self { lo, hi, counts })
    }

    pub fn to_csv(&self) -> String {
        let bins = self.counts.len();
        let width = if self.hi > self.lo { (self.hi - self.lo) / bins as f64 } else { 1.0 };
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.lo + i as f64 * width, self.lo + (i + 1) as f64 * width, c));
        }
        s
    }
}

/// Two-sided permutation test on the difference of sample means.
///
/// Returns the p-value `(1 + #{|Δ*| ≥ |Δ|}) / (1 + permutations)`.
pub fn permutation_test(a: &[f64], b: &[f64], permutations: usize, seed: u64) -> Result<f64, AnalysisError> {
    if a.is_empty() || b.is_empty() || permutations == 0 {
        return Err(AnalysisError::Empty);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let observed = (mean(a) - mean(b)).abs();
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-12 * observed.max(1.0);
    let mut extreme = 0usize;
    for _ in 0..permutations {
        pooled.shuffle(&mut rng);
        let (pa, pb) = pooled.split_at(a.len());
        if (mean(pa) - mean(pb)).abs() >= observed - tol {
            extreme += 1;
        }
    }
    Ok((1 + extreme) as f64 / (1 + permutations) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> Grid2 {
        // rows are depth levels, characters are columns
        let nz = rows.len();
        let nx = rows[0].len();
        Grid2::from_fn(nx, nz, |x, z| if rows[z].as_bytes()[x] == b'#' { 1.0 } else { 0.0 })
    }

    fn wells(nx: usize, nz: usize) -> WellSpec {
        WellSpec { injector_column: 0, producer_column: nx - 1, ..WellSpec::for_grid(nx, nz) }
    }

    #[test]
    fn threshold_is_strict() {
        let g = Grid2::filled(3, 2, 0.5);
        assert!(threshold_facies(&g, 0.5).as_slice().iter().all(|&v| v == 0.0));
        let b = grid(&["#.#", ".#."]);
        assert_eq!(threshold_facies(&b, 0.5), b);
    }

    #[test]
    fn sand_row_connects() {
        let g = grid(&["......", "######", "......"]);
        let r = well_connectivity(&g, &wells(6, 3), &ConnectivityOptions::default());
        assert!(r.connected_raw && r.connected_after_dilation);
        assert_eq!(r.largest_cluster_size, 6);
    }

    #[test]
    fn all_shale() {
        let g = Grid2::zeros(6, 3);
        let r = well_connectivity(&g, &wells(6, 3), &ConnectivityOptions::default());
        assert_eq!(r, ConnectivityReport { connected_raw: false, connected_after_dilation: false, largest_cluster_size: 0 });
    }

    #[test]
    fn one_cell_gap_closes_after_dilation() {
        let g = grid(&["........", "####.###", "........"]);
        let r = well_connectivity(&g, &wells(8, 3), &ConnectivityOptions::default());
        assert!(!r.connected_raw);
        assert!(r.connected_after_dilation);
        let none = ConnectivityOptions { dilation_passes: 0, ..Default::default() };
        assert!(!well_connectivity(&g, &wells(8, 3), &none).connected_after_dilation);
        let wide = grid(&["........", "###..###", "........"]);
        assert!(!well_connectivity(&wide, &wells(8, 3), &ConnectivityOptions::default()).connected_after_dilation);
    }

    #[test]
    fn diagonal_contact_depends_on_neighbourhood() {
        let g = grid(&["##..", "..##"]);
        assert_eq!(label_components(&g, Neighbourhood::Four).count(), 2);
        assert_eq!(label_components(&g, Neighbourhood::Eight).count(), 1);
    }

    #[test]
    fn ensemble_stats_examples() {
        let a = Grid2::filled(2, 2, 1.0);
        let b = Grid2::zeros(2, 2);
        let s = ensemble_stats(&[a.clone(), b], 0.5).unwrap();
        assert!(s.mean.as_slice().iter().all(|&m| m == 0.5));
        assert!(s.std.as_slice().iter().all(|&m| m == 0.5));
        let s = ensemble_stats(&[a.clone(), a], 0.5).unwrap();
        assert!(s.std.as_slice().iter().all(|&m| m == 0.0));
        assert!(matches!(ensemble_stats(&[], 0.5), Err(AnalysisError::Empty)));
    }

    #[test]
    fn slerp_endpoints_and_errors() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 2.0, 0.0];
        assert_eq!(slerp(&a, &b, 0.0).unwrap(), a.to_vec());
        let e = slerp(&a, &b, 1.0).unwrap();
        assert!(e.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
        assert!(slerp(&a, &[-2.0, 0.0, 0.0], 0.5).is_err());
        assert!(slerp(&a, &[0.0; 3], 0.5).is_err());
    }

    #[test]
    fn permutation_test_separates_shifted_samples() {
        let a = [0.1, 0.2, 0.15, 0.12, 0.18, 0.11];
        let b = [0.9, 0.8, 0.85, 0.95, 0.88, 0.82];
        assert!(permutation_test(&a, &b, 2000, 1).unwrap() < 0.01);
        assert!(permutation_test(&a, &a, 2000, 1).unwrap() > 0.99);
    }

    #[test]
    fn histogram_counts() {
        let h = Histogram::new(&[0.0, 0.1, 0.5, 0.99, 1.0, 3.0], 2, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.counts, vec![2, 4]);
        assert!(h.to_csv().starts_with("bin_lo,bin_hi,count\n0,0.5,2\n"));
    }
}
