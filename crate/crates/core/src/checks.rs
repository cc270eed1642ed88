//! Numerical checks of the symmetry properties: volume and convolution
//! equivariance under azimuth shifts, and descriptor invariance.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::descriptor::Network;
use crate::engine::{conv_forward, ConvSpec};
use crate::error::Result;
use crate::geometry::{random_rotation, rotation_about_axis, rotation_about_z, Mat3, PointCloud, Vec3};
use crate::rng::rng_for;
use crate::spatial::SpatialIndex;
use crate::synth::{synth_pair, SyntheticSceneSpec};
use crate::transformer::{
    build_cylindrical_volume, estimate_reference_axis, AlignedPatch, CylindricalVolume, TransformerConfig,
};

/// Largest coordinate difference between two volumes with identical voxel
/// membership; infinite when any voxel holds different points.
pub fn volume_deviation(a: &CylindricalVolume, b: &CylindricalVolume) -> f64 {
    if a.offsets != b.offsets || a.sources != b.sources || a.neighbors != b.neighbors {
        return f64::INFINITY;
    }
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| (p - q).abs().max())
        .fold(0.0, f64::max)
}

/// Random points in the support ball, already in the aligned frame.
pub fn random_aligned_patch(seed: u64, points: usize, radius: f64) -> AlignedPatch {
    let mut rng = rng_for(seed, &[0x616c_6967_6e]);
    let mut pts = Vec::with_capacity(points);
    while pts.len() < points {
        let p = Vec3::new(
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
        );
        if p.norm() <= radius {
            pts.push(p);
        }
    }
    AlignedPatch {
        points: PointCloud::new(pts),
        rotation: Mat3::identity(),
        anchor: Vec3::zeros(),
    }
}

/// Max deviation of `volume(r_i · P)` from `shift_i(volume(P))` over the given
/// patches and every shift `i ∈ 1..=L`.
pub fn volume_equivariance(cfg: &TransformerConfig, seed: u64, patches: usize, points: usize) -> Result<f64> {
    let l = cfg.azimuth_bins;
    let mut worst: f64 = 0.0;
    for k in 0..patches {
        let patch = random_aligned_patch(crate::rng::derive_seed(seed, &[k as u64]), points, cfg.support_radius);
        let base = build_cylindrical_volume(&patch, cfg)?;
        for i in 1..=l {
            let rot = rotation_about_z(2.0 * PI * i as f64 / l as f64);
            let turned = AlignedPatch {
                points: PointCloud::new(patch.points.iter().map(|p| rot * p).collect()),
                ..patch.clone()
            };
            let got = build_cylindrical_volume(&turned, cfg)?;
            worst = worst.max(volume_deviation(&got, &base.shifted_azimuth(i as isize)));
        }
    }
    Ok(worst)
}

fn shift_map(map: &[f64], extent: [usize; 3], channels: usize, shift: usize) -> Vec<f64> {
    let [j, k, l] = extent;
    let mut out = vec![0.0; map.len()];
    for a in 0..j {
        for b in 0..k {
            for c in 0..l {
                let src = ((a * k + b) * l + c) * channels;
                let dst = ((a * k + b) * l + (c + shift) % l) * channels;
                out[dst..dst + channels].copy_from_slice(&map[src..src + channels]);
            }
        }
    }
    out
}

/// Max of `|conv(shift(F)) − shift(conv(F))|` over random stride-1 instances
/// and every azimuth shift.
pub fn conv_equivariance(seed: u64, instances: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in 0..instances {
        let mut rng = rng_for(seed, &[0x636f_6e76, n as u64]);
        let extent = [rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..10)];
        let kernel = [
            rng.random_range(1..=extent[0]),
            rng.random_range(1..=extent[1]),
            rng.random_range(1..=extent[2].min(5)),
        ];
        let spec = ConvSpec::new(rng.random_range(1..5), rng.random_range(1..5), kernel, [1, 1, 1]);
        let normal = |rng: &mut rand_chacha::ChaCha8Rng, len: usize| -> Vec<f64> {
            (0..len).map(|_| StandardNormal.sample(rng)).collect()
        };
        let map = normal(&mut rng, extent.iter().product::<usize>() * spec.in_channels);
        let w = normal(&mut rng, spec.weight_shape().iter().product());
        let b = normal(&mut rng, spec.out_channels);
        let shape = [extent[0], extent[1], extent[2], spec.in_channels];
        let (out_ext, out) = conv_forward(&spec, &shape, &map, &w, &b)?;
        for s in 1..=extent[2] {
            let (_, shifted_out) = conv_forward(&spec, &shape, &shift_map(&map, extent, spec.in_channels, s), &w, &b)?;
            let expect = shift_map(&out, out_ext, spec.out_channels, s);
            let dev = shifted_out.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(dev);
        }
    }
    Ok(worst)
}

/// Support patches (points, anchor) cut from seeded synthetic fragments. The
/// fragments' sensor, and hence the viewpoint, is the origin.
pub fn synthetic_patches(seed: u64, count: usize, radius: f64) -> Result<Vec<(PointCloud, Vec3)>> {
    let pair = synth_pair(&SyntheticSceneSpec {
        seed,
        ..SyntheticSceneSpec::default()
    })?;
    let cloud = pair.frag_a;
    let index = SpatialIndex::new(&cloud);
    let mut rng = rng_for(seed, &[0x7061_7463_68]);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 100 * count {
        tries += 1;
        let a = rng.random_range(0..cloud.len());
        let idx = index.radius_query(&cloud.points[a], radius);
        if idx.len() >= 20 {
            out.push((cloud.select(&idx), cloud.points[a]));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct DescriptorInvariance {
    /// Max deviation under rotations by multiples of the azimuth period.
    pub grid_deviation: f64,
    /// Max deviation under the remaining grid rotations (`2πi/L`, any `i`).
    pub off_period_deviation: f64,
    /// Cosine similarity per patch under a random rotation of the whole scene.
    pub so3_cosines: Vec<f64>,
    /// Distances between descriptors of unrelated patches.
    pub distinct_distances: Vec<f64>,
}

impl DescriptorInvariance {
    pub fn mean_cosine(&self) -> f64 {
        self.so3_cosines.iter().sum::<f64>() / self.so3_cosines.len().max(1) as f64
    }

    pub fn min_cosine(&self) -> f64 {
        self.so3_cosines.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Rotates every patch about its estimated reference axis (through the anchor)
/// by each grid angle `2πi/L`, and the whole scene by a random rotation.
pub fn descriptor_invariance(net: &Network, patches: &[(PointCloud, Vec3)], seed: u64) -> Result<DescriptorInvariance> {
    let cfg = &net.config().transformer;
    let (l, period) = (cfg.azimuth_bins, net.config().azimuth_period());
    let view = cfg.viewpoint();
    let mut report = DescriptorInvariance {
        grid_deviation: 0.0,
        off_period_deviation: 0.0,
        so3_cosines: Vec::new(),
        distinct_distances: Vec::new(),
    };
    let mut rng = rng_for(seed, &[0x736f_33]);
    let mut previous: Option<Vec<f64>> = None;
    for (patch, anchor) in patches {
        let base = net.describe(patch, anchor)?;
        let relative = PointCloud::new(patch.iter().map(|p| p - anchor).collect());
        let axis = estimate_reference_axis(&relative, &(view - anchor))?;
        for i in 1..=l {
            let rot = rotation_about_axis(&axis, 2.0 * PI * i as f64 / l as f64);
            let turned = PointCloud::new(patch.iter().map(|p| anchor + rot * (p - anchor)).collect());
            let dev = max_abs_diff(&base, &net.describe(&turned, anchor)?);
            if i % period == 0 {
                report.grid_deviation = report.grid_deviation.max(dev);
            } else {
                report.off_period_deviation = report.off_period_deviation.max(dev);
            }
        }
        // Rotating about the origin co-rotates the viewpoint, which is the origin.
        let q = random_rotation(&mut rng);
        let moved = PointCloud::new(patch.iter().map(|p| q * p).collect());
        let d = net.describe(&moved, &(q * anchor))?;
        let cos = base.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>()
            / (base.iter().map(|a| a * a).sum::<f64>().sqrt() * d.iter().map(|a| a * a).sum::<f64>().sqrt());
        report.so3_cosines.push(cos);
        if let Some(prev) = previous.replace(base.clone()) {
            let dist = prev.iter().zip(&base).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            report.distinct_distances.push(dist);
        }
    }
    Ok(report)
}

/// Rotates `patch` about an axis through `anchor`.
pub fn rotate_about(patch: &PointCloud, anchor: &Vec3, axis: &Vec3, angle: f64) -> PointCloud {
    let rot = rotation_about_axis(axis, angle);
    PointCloud::new(patch.iter().map(|p| anchor + rot * (p - anchor)).collect())
}
