//! Seeded synthetic fragment pairs.
//!
//! A scene is a terrain heightfield built from primitive shapes: creases
//! (half-plane ramps), spherical caps, rounded boxes and cylindrical ridges.
//! Fragment A covers a square window of the terrain; fragment B covers the same
//! window shifted along X so that a fraction `overlap` of A's area is shared.
//! B reuses A's samples inside the shared strip (optionally resampling some of
//! them), is expressed in its own sensor frame, and receives Gaussian noise.
//! Both fragments are expressed relative to a sensor above the terrain, so the
//! viewpoint of each fragment is its origin.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_about_axis, PointCloud, RigidTransform, Vec3};
use crate::rng::rng_for;
use crate::spatial::{median_spacing, SpatialIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub planes: usize,
    pub spheres: usize,
    pub boxes: usize,
    pub cylinders: usize,
    pub points_per_fragment: usize,
    /// Target fraction of A's points that also appear in B, in `(0, 1]`.
    pub overlap: f64,
    /// Standard deviation of the noise added to B, in meters.
    pub noise_sigma: f64,
    /// Peak-to-trough sampling density ratio minus one; 0 gives uniform density.
    pub density_variation: f64,
    /// Fraction of the shared strip that B samples afresh instead of copying A.
    pub resample_fraction: f64,
    /// Largest rotation angle between the two sensor frames, in degrees.
    pub max_rotation_deg: f64,
    /// Largest extra sensor displacement, in meters.
    pub max_translation: f64,
    /// Side of the square window each fragment covers, in meters.
    pub fragment_size: f64,
    /// Height of the sensors above the mean terrain level, in meters.
    pub sensor_height: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            planes: 4,
            spheres: 10,
            boxes: 6,
            cylinders: 4,
            points_per_fragment: 2000,
            overlap: 0.5,
            noise_sigma: 0.0,
            density_variation: 0.0,
            resample_fraction: 0.0,
            max_rotation_deg: 20.0,
            max_translation: 0.2,
            fragment_size: 2.0,
            sensor_height: 1.5,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return Err(Error::invalid(format!("overlap must lie in (0, 1], got {}", self.overlap)));
        }
        if !(self.noise_sigma >= 0.0) || !(self.density_variation >= 0.0) {
            return Err(Error::invalid("noise and density variation must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.resample_fraction) {
            return Err(Error::invalid("resample_fraction must lie in [0, 1]"));
        }
        if self.points_per_fragment < 3 || !(self.fragment_size > 0.0) {
            return Err(Error::invalid("need at least 3 points and a positive fragment size"));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_translation >= 0.0 && self.sensor_height > 0.0) {
            return Err(Error::invalid("transform ranges and sensor height must be nonnegative"));
        }
        Ok(())
    }
}

/// A generated pair: `transform` maps A's frame into B's.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub frag_a: PointCloud,
    pub frag_b: PointCloud,
    pub transform: RigidTransform,
    /// `mask[i]` is true when noise-free B has a sample within twice its median
    /// spacing of A's point `i`.
    pub overlap_mask: Vec<bool>,
    /// `(i, j)`: B's point `j` is A's point `i`, transformed and noised.
    pub correspondences: Vec<(usize, usize)>,
}

impl SyntheticPair {
    pub fn overlap_fraction(&self) -> f64 {
        self.overlap_mask.iter().filter(|&&m| m).count() as f64 / self.overlap_mask.len() as f64
    }

    /// Rotates each fragment about its sensor by an independent rotation and
    /// updates the ground truth accordingly.
    pub fn rotated(&self, rot_a: &crate::geometry::Mat3, rot_b: &crate::geometry::Mat3) -> SyntheticPair {
        let ra = RigidTransform::from_rotation(*rot_a);
        let rb = RigidTransform::from_rotation(*rot_b);
        SyntheticPair {
            frag_a: crate::geometry::apply_transform(&ra, &self.frag_a),
            frag_b: crate::geometry::apply_transform(&rb, &self.frag_b),
            transform: rb.compose(&self.transform).compose(&ra.inverse()),
            overlap_mask: self.overlap_mask.clone(),
            correspondences: self.correspondences.clone(),
        }
    }
}

#[derive(Debug, Clone)]
enum Primitive {
    /// Ramp `slope · max(0, n·(x, y) − d)`.
    Crease { normal: [f64; 2], offset: f64, slope: f64 },
    /// Cap of a sphere of radius `r` whose center sits `sink` below the ground.
    Cap { center: [f64; 2], radius: f64, sink: f64 },
    /// Box with softened walls, rotated by `angle`.
    Block { center: [f64; 2], half: [f64; 2], angle: f64, height: f64 },
    /// Half-buried cylinder along direction `angle` through `point`.
    Ridge { point: [f64; 2], angle: f64, radius: f64 },
}

impl Primitive {
    fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            Primitive::Crease { normal, offset, slope } => slope * (normal[0] * x + normal[1] * y - offset).max(0.0),
            Primitive::Cap { center, radius, sink } => {
                let d2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                ((radius * radius - d2).max(0.0).sqrt() - sink).max(0.0)
            }
            Primitive::Block { center, half, angle, height } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - center[0], y - center[1]);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                let wall = |t: f64, h: f64| 1.0 / (1.0 + (((t.abs() - h) * 60.0).clamp(-50.0, 50.0)).exp());
                height * wall(u, half[0]) * wall(v, half[1])
            }
            Primitive::Ridge { point, angle, radius } => {
                let (s, c) = angle.sin_cos();
                let d = -s * (x - point[0]) + c * (y - point[1]);
                (radius * radius - d * d).max(0.0).sqrt()
            }
        }
    }
}

struct Terrain {
    primitives: Vec<Primitive>,
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Terrain {
    fn random(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng, lo: [f64; 2], hi: [f64; 2]) -> Self {
        let at = |rng: &mut ChaCha8Rng| [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
        let mut primitives = Vec::new();
        for _ in 0..spec.planes {
            let a: f64 = rng.random_range(0.0..2.0 * PI);
            let p = at(rng);
            let normal = [a.cos(), a.sin()];
            primitives.push(Primitive::Crease {
                normal,
                offset: normal[0] * p[0] + normal[1] * p[1],
                slope: rng.random_range(0.1..0.4),
            });
        }
        for _ in 0..spec.spheres {
            let radius = rng.random_range(0.12..0.4);
            primitives.push(Primitive::Cap {
                center: at(rng),
                radius,
                sink: radius * rng.random_range(0.2..0.7),
            });
        }
        for _ in 0..spec.boxes {
            primitives.push(Primitive::Block {
                center: at(rng),
                half: [rng.random_range(0.08..0.3), rng.random_range(0.08..0.3)],
                angle: rng.random_range(0.0..PI),
                height: rng.random_range(0.05..0.25),
            });
        }
        for _ in 0..spec.cylinders {
            primitives.push(Primitive::Ridge {
                point: at(rng),
                angle: rng.random_range(0.0..PI),
                radius: rng.random_range(0.05..0.15),
            });
        }
        let waves = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.01..0.04),
                    rng.random_range(1.0..4.0),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        Self { primitives, waves }
    }

    fn height(&self, x: f64, y: f64) -> f64 {
        let base: f64 = self
            .waves
            .iter()
            .map(|&(amp, freq, dir, phase)| amp * (freq * (dir.cos() * x + dir.sin() * y) + phase).sin())
            .sum();
        base + self.primitives.iter().map(|p| p.height(x, y)).sum::<f64>()
    }

    fn slope_factor(&self, x: f64, y: f64) -> f64 {
        let h = 1e-4;
        let gx = (self.height(x + h, y) - self.height(x - h, y)) / (2.0 * h);
        let gy = (self.height(x, y + h) - self.height(x, y - h)) / (2.0 * h);
        (1.0 + gx * gx + gy * gy).sqrt()
    }
}

/// Smooth positive density field for thinning.
struct DensityField {
    variation: f64,
    freq: [f64; 2],
    phase: [f64; 2],
}

impl DensityField {
    fn random(variation: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            variation,
            freq: [rng.random_range(1.0..3.0), rng.random_range(1.0..3.0)],
            phase: [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)],
        }
    }

    /// Acceptance probability in `[1 / (1 + variation), 1]`.
    fn accept(&self, x: f64, y: f64) -> f64 {
        let f = 0.25 * ((self.freq[0] * x + self.phase[0]).sin() + 1.0) * ((self.freq[1] * y + self.phase[1]).sin() + 1.0);
        1.0 / (1.0 + self.variation * f)
    }
}

const MAX_SLOPE_FACTOR: f64 = 4.0;

/// Area-uniform terrain samples in the window, thinned by `density`.
fn sample_surface(
    terrain: &Terrain,
    density: &DensityField,
    rng: &mut ChaCha8Rng,
    lo: [f64; 2],
    hi: [f64; 2],
    count: usize,
) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = rng.random_range(lo[0]..hi[0]);
        let y = rng.random_range(lo[1]..hi[1]);
        let keep = terrain.slope_factor(x, y).min(MAX_SLOPE_FACTOR) / MAX_SLOPE_FACTOR * density.accept(x, y);
        if rng.random::<f64>() < keep {
            out.push(Vec3::new(x, y, terrain.height(x, y)));
        }
    }
    out
}

/// Generates a fragment pair, deterministic in `spec`.
pub fn synth_pair(spec: &SyntheticSceneSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, &[0x7379_6e74_68]);
    let n = spec.points_per_fragment;
    let s = spec.fragment_size;
    let shift = (1.0 - spec.overlap) * s;
    let (a_lo, a_hi) = ([-s / 2.0, -s / 2.0], [s / 2.0, s / 2.0]);
    let (b_lo, b_hi) = ([a_lo[0] + shift, a_lo[1]], [a_hi[0] + shift, a_hi[1]]);
    let strip = a_hi[0] - spec.overlap * s;

    let margin = 0.3;
    let terrain = Terrain::random(
        spec,
        &mut rng,
        [a_lo[0] - margin, a_lo[1] - margin],
        [b_hi[0] + margin, b_hi[1] + margin],
    );
    let density_a = DensityField::random(spec.density_variation, &mut rng);
    let density_b = DensityField::random(spec.density_variation, &mut rng);

    let scene_a = sample_surface(&terrain, &density_a, &mut rng, a_lo, a_hi, n);
    let shared: Vec<usize> = (0..n).filter(|&i| scene_a[i].x >= strip).collect();

    // Shared-strip samples B copies; the rest of the strip is sampled afresh.
    let copies = ((shared.len() as f64) * (1.0 - spec.resample_fraction)).round() as usize;
    let mut copied: Vec<usize> = sample(&mut rng, shared.len(), copies.min(shared.len()))
        .into_iter()
        .map(|k| shared[k])
        .collect();
    copied.sort_unstable();
    let fresh_strip = shared.len() - copied.len();
    let fresh_rest = n.saturating_sub(shared.len());
    let mut scene_b: Vec<Vec3> = copied.iter().map(|&i| scene_a[i]).collect();
    if fresh_strip > 0 {
        scene_b.extend(sample_surface(
            &terrain,
            &density_b,
            &mut rng,
            [strip, b_lo[1]],
            [a_hi[0], b_hi[1]],
            fresh_strip,
        ));
    }
    if fresh_rest > 0 && a_hi[0] < b_hi[0] {
        scene_b.extend(sample_surface(&terrain, &density_b, &mut rng, [a_hi[0], b_lo[1]], b_hi, fresh_rest));
    }

    // A point overlaps when noise-free B has a sample within twice B's median spacing.
    let index_b = SpatialIndex::from_points(&scene_b);
    let tol = 2.0 * median_spacing(&PointCloud::new(scene_b.clone()));
    let overlap_mask: Vec<bool> = scene_a
        .iter()
        .map(|p| index_b.nearest(p).is_some_and(|(_, d)| d <= tol))
        .collect();

    // Sensor frames: A's sensor sits above A's window center, B's above its own
    // center with a bounded random offset and tilt.
    let mean_a = scene_a.iter().map(|p| p.z).sum::<f64>() / n as f64;
    let sensor_a = Vec3::new(0.0, 0.0, mean_a + spec.sensor_height);
    let jitter = random_in_ball(&mut rng) * spec.max_translation;
    let sensor_b = Vec3::new(shift, 0.0, mean_a + spec.sensor_height) + jitter;
    let axis = random_in_ball(&mut rng);
    let angle = rng.random_range(0.0..=spec.max_rotation_deg).to_radians();
    let tilt = if axis.norm() > 1e-9 {
        rotation_about_axis(&axis, angle)
    } else {
        crate::geometry::Mat3::identity()
    };
    // scene -> A: p − sensor_a; scene -> B: tiltᵀ (p − sensor_b)
    let b_from_scene = RigidTransform::new(tilt.transpose(), -(tilt.transpose() * sensor_b));
    let scene_from_a = RigidTransform::from_translation(sensor_a);
    let transform = b_from_scene.compose(&scene_from_a);

    let frag_a = PointCloud::new(scene_a.iter().map(|p| p - sensor_a).collect());
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let frag_b = PointCloud::new(
        scene_b
            .iter()
            .map(|p| {
                let q = b_from_scene.apply(p);
                if spec.noise_sigma > 0.0 {
                    q + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                } else {
                    q
                }
            })
            .collect(),
    );
    let correspondences = copied.iter().enumerate().map(|(j, &i)| (i, j)).collect();
    Ok(SyntheticPair {
        frag_a,
        frag_b,
        transform,
        overlap_mask,
        correspondences,
    })
}

fn random_in_ball(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}
