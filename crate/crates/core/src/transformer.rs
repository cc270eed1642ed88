//! Patch canonicalization and cylindrical volume construction.
//!
//! A support patch is rotated so its reference axis becomes +Z and re-centered
//! on the anchor. The ball of radius `R` is then split into `J × K × L` bins over
//! radius, elevation and azimuth. Each bin gathers the points within `R_v` of its
//! center and stores them rotated about Z so the bin center lands on the +Y half
//! of the YZ-plane. Rotating the input about Z by `2πi/L` therefore only relabels
//! the azimuth index of the stored sets.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{minimal_rotation_to_z, rotation_about_z, Mat3, PointCloud, Vec3};
use crate::rng::rng_for;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    /// Support radius `R` in meters.
    pub support_radius: f64,
    /// `J`
    pub radial_bins: usize,
    /// `K`
    pub elevation_bins: usize,
    /// `L`
    pub azimuth_bins: usize,
    /// `R_v` in meters.
    pub voxel_radius: f64,
    /// `k_v`
    pub samples_per_voxel: usize,
    pub seed: u64,
    pub viewpoint: [f64; 3],
    /// Rotate the reference axis onto +Z. Off reproduces the "no reference axis" ablation.
    pub axis_alignment: bool,
    /// Per-voxel XY-plane rotation. Off stores raw aligned points.
    pub xy_transform: bool,
    /// Store `R_jkl (p − v_jkl)` instead of `R_jkl p`.
    pub voxel_relative: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            support_radius: 0.3,
            radial_bins: 9,
            elevation_bins: 40,
            azimuth_bins: 80,
            voxel_radius: 0.04,
            samples_per_voxel: 30,
            seed: 0,
            viewpoint: [0.0; 3],
            axis_alignment: true,
            xy_transform: true,
            voxel_relative: false,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radial_bins == 0 || self.elevation_bins == 0 || self.azimuth_bins == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if !(self.voxel_radius > 0.0) || !(self.support_radius > 0.0) {
            return Err(Error::invalid("support and voxel radii must be positive"));
        }
        if self.samples_per_voxel == 0 {
            return Err(Error::invalid("samples_per_voxel must be at least 1"));
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.radial_bins * self.elevation_bins * self.azimuth_bins
    }

    pub fn viewpoint(&self) -> Vec3 {
        Vec3::from(self.viewpoint)
    }
}

/// Anchor-centered, axis-aligned support patch.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPatch {
    pub points: PointCloud,
    /// `R_z`, mapping the estimated reference axis onto +Z.
    pub rotation: Mat3,
    pub anchor: Vec3,
}

/// Smallest-eigenvalue eigenvector of the patch covariance, pointing towards
/// `viewpoint`.
///
/// When the axis is exactly perpendicular to the viewpoint direction the sign
/// prefers a nonnegative Z component, then Y, then X.
pub fn estimate_reference_axis(patch: &PointCloud, viewpoint: &Vec3) -> Result<Vec3> {
    if patch.len() < 3 {
        return Err(Error::DegeneratePatch(format!(
            "need at least 3 points, got {}",
            patch.len()
        )));
    }
    let centroid = patch.centroid().expect("non-empty");
    let mut cov = Mat3::zeros();
    for p in patch.iter() {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= patch.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, top) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(top > 0.0) {
        return Err(Error::DegeneratePatch("all points coincide".into()));
    }
    if mid <= 1e-12 * top {
        return Err(Error::DegeneratePatch("points are collinear".into()));
    }
    let mut axis: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    axis.normalize_mut();
    let toward = axis.dot(&(viewpoint - centroid));
    let flip = if toward != 0.0 {
        toward < 0.0
    } else if axis[2] != 0.0 {
        axis[2] < 0.0
    } else if axis[1] != 0.0 {
        axis[1] < 0.0
    } else {
        axis[0] < 0.0
    };
    if flip {
        axis = -axis;
    }
    Ok(axis)
}

/// Rotates the patch so its reference axis is +Z and moves the anchor to the origin.
pub fn align_patch(patch: &PointCloud, anchor: &Vec3, cfg: &TransformerConfig) -> Result<AlignedPatch> {
    let limit = cfg.support_radius * (1.0 + 1e-9);
    if let Some(p) = patch.iter().find(|p| (*p - anchor).norm() > limit) {
        return Err(Error::invalid(format!(
            "point {:?} lies outside the support radius {} of the anchor",
            p.as_slice(),
            cfg.support_radius
        )));
    }
    // Everything below sees only anchor-relative coordinates, so translating
    // patch, anchor and viewpoint together is exact whenever the shift is.
    let relative = PointCloud::new(patch.iter().map(|p| p - anchor).collect());
    let rotation = if cfg.axis_alignment {
        let axis = estimate_reference_axis(&relative, &(cfg.viewpoint() - anchor))?;
        minimal_rotation_to_z(&axis)
    } else {
        if patch.len() < 3 {
            return Err(Error::DegeneratePatch(format!(
                "need at least 3 points, got {}",
                patch.len()
            )));
        }
        Mat3::identity()
    };
    let points = relative.iter().map(|p| rotation * p).collect();
    Ok(AlignedPatch {
        points: PointCloud::new(points),
        rotation,
        anchor: *anchor,
    })
}

/// Azimuth of the `l`-th bin center (`l` is 1-based).
fn bin_azimuth(l: usize, azimuth_bins: usize) -> f64 {
    2.0 * PI * l as f64 / azimuth_bins as f64
}

/// Bin-center positions in `(j, k, l)` row-major order (azimuth fastest).
pub fn voxel_centers(cfg: &TransformerConfig) -> Vec<Vec3> {
    let (jn, kn, ln) = (cfg.radial_bins, cfg.elevation_bins, cfg.azimuth_bins);
    let mut out = Vec::with_capacity(jn * kn * ln);
    for j in 1..=jn {
        let rho = (j as f64 - 0.5) * cfg.support_radius / jn as f64;
        for k in 1..=kn {
            let phi = -PI / 2.0 + (k as f64 - 0.5) * PI / kn as f64;
            let (sp, cp) = phi.sin_cos();
            for l in 1..=ln {
                let (st, ct) = bin_azimuth(l, ln).sin_cos();
                out.push(Vec3::new(rho * cp * ct, rho * cp * st, rho * sp));
            }
        }
    }
    out
}

/// Per-bin XY rotation for azimuth index `l ∈ 1..=L`: a Z rotation by `π/2 − 2πl/L`.
pub fn voxel_rotation(l: usize, azimuth_bins: usize) -> Mat3 {
    rotation_about_z(PI / 2.0 - 2.0 * PI * l as f64 / azimuth_bins as f64)
}

/// `J × K × L` grid of per-bin point samples, periodic in the azimuth index.
#[derive(Debug, Clone, PartialEq)]
pub struct CylindricalVolume {
    pub radial_bins: usize,
    pub elevation_bins: usize,
    pub azimuth_bins: usize,
    pub samples_per_voxel: usize,
    /// Stored (rotated) points of all voxels, concatenated in voxel order.
    pub points: Vec<Vec3>,
    /// Index into the aligned patch for each stored point.
    pub sources: Vec<usize>,
    /// `offsets[v]..offsets[v + 1]` is voxel `v`'s range in `points`.
    pub offsets: Vec<usize>,
    /// Radius-query size of each voxel before subsampling to `k_v`.
    pub neighbors: Vec<usize>,
    pub centers: Vec<Vec3>,
}

impl CylindricalVolume {
    pub fn num_voxels(&self) -> usize {
        self.radial_bins * self.elevation_bins * self.azimuth_bins
    }

    /// Flat voxel index for 0-based `(j, k, l)`; `l` wraps.
    pub fn flat_index(&self, j: usize, k: usize, l: isize) -> usize {
        let ln = self.azimuth_bins as isize;
        let l = l.rem_euclid(ln) as usize;
        (j * self.elevation_bins + k) * self.azimuth_bins + l
    }

    pub fn voxel(&self, j: usize, k: usize, l: isize) -> &[Vec3] {
        let v = self.flat_index(j, k, l);
        &self.points[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn occupancy(&self, j: usize, k: usize, l: isize) -> usize {
        let v = self.flat_index(j, k, l);
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn occupancies(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Relabels azimuth so voxel `(j, k, l)` of the result holds voxel
    /// `(j, k, l − shift)` of `self`.
    pub fn shifted_azimuth(&self, shift: isize) -> CylindricalVolume {
        let mut points = Vec::with_capacity(self.points.len());
        let mut sources = Vec::with_capacity(self.sources.len());
        let mut offsets = Vec::with_capacity(self.offsets.len());
        let mut neighbors = Vec::with_capacity(self.neighbors.len());
        offsets.push(0);
        for j in 0..self.radial_bins {
            for k in 0..self.elevation_bins {
                for l in 0..self.azimuth_bins {
                    let v = self.flat_index(j, k, l as isize - shift);
                    let range = self.offsets[v]..self.offsets[v + 1];
                    points.extend_from_slice(&self.points[range.clone()]);
                    sources.extend_from_slice(&self.sources[range]);
                    offsets.push(points.len());
                    neighbors.push(self.neighbors[v]);
                }
            }
        }
        CylindricalVolume {
            points,
            sources,
            offsets,
            neighbors,
            centers: self.centers.clone(),
            ..*self
        }
    }
}

/// Bins an aligned patch into a [`CylindricalVolume`].
///
/// Candidates of each voxel are sorted by `(distance to center, source index)`.
/// Voxels with more than `k_v` candidates keep a seeded subset whose draw depends
/// only on the seed and the candidate count, so congruent candidate sets in
/// different azimuth bins are sampled identically.
pub fn build_cylindrical_volume(aligned: &AlignedPatch, cfg: &TransformerConfig) -> Result<CylindricalVolume> {
    cfg.validate()?;
    let centers = voxel_centers(cfg);
    let index = SpatialIndex::new(&aligned.points);
    let (jn, kn, ln) = (cfg.radial_bins, cfg.elevation_bins, cfg.azimuth_bins);
    let kv = cfg.samples_per_voxel;

    let mut points = Vec::new();
    let mut sources = Vec::new();
    let mut offsets = Vec::with_capacity(centers.len() + 1);
    let mut neighbors = Vec::with_capacity(centers.len());
    offsets.push(0);
    let rotations: Vec<Mat3> = (1..=ln).map(|l| voxel_rotation(l, ln)).collect();

    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for j in 0..jn {
        for k in 0..kn {
            for l in 0..ln {
                let v = (j * kn + k) * ln + l;
                let center = centers[v];
                candidates.clear();
                candidates.extend(
                    index
                        .radius_query(&center, cfg.voxel_radius)
                        .into_iter()
                        .map(|i| ((aligned.points.points[i] - center).norm_squared(), i)),
                );
                candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                neighbors.push(candidates.len());
                let keep: Vec<usize> = if candidates.len() > kv {
                    let mut rng = rng_for(cfg.seed, &[0x766f_78, candidates.len() as u64]);
                    let mut picked = sample(&mut rng, candidates.len(), kv).into_vec();
                    picked.sort_unstable();
                    picked.into_iter().map(|c| candidates[c].1).collect()
                } else {
                    candidates.iter().map(|c| c.1).collect()
                };
                let rot = &rotations[l];
                for i in keep {
                    let p = aligned.points.points[i];
                    let stored = match (cfg.xy_transform, cfg.voxel_relative) {
                        (true, false) => rot * p,
                        (true, true) => rot * (p - center),
                        (false, false) => p,
                        (false, true) => p - center,
                    };
                    points.push(stored);
                    sources.push(i);
                }
                offsets.push(points.len());
            }
        }
    }
    Ok(CylindricalVolume {
        radial_bins: jn,
        elevation_bins: kn,
        azimuth_bins: ln,
        samples_per_voxel: kv,
        points,
        sources,
        offsets,
        neighbors,
        centers,
    })
}
