//! Patch descriptors: cylindrical volume, shared point layers, cylindrical
//! convolutions, global max pooling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{ConvSpec, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::rng::rng_for;
use crate::spatial::SpatialIndex;
use crate::transformer::{align_patch, build_cylindrical_volume, CylindricalVolume, TransformerConfig};

pub const DESCRIPTOR_MAGIC: &[u8; 8] = b"SPINDSC1";
pub const MAX_CHANNELS: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub transformer: TransformerConfig,
    /// Point-layer widths, starting with the input width 3.
    pub mlp_widths: Vec<usize>,
    pub conv_layers: Vec<ConvSpec>,
    pub output_dim: usize,
    pub l2_normalize: bool,
    /// Use the per-voxel neighbour count of the radius query, before
    /// subsampling and divided by `k_v`, instead of point layers.
    pub density_signature: bool,
    /// Replace every convolution kernel by `1 × 1 × 1` with stride 1.
    pub mlp_instead_of_conv: bool,
    /// Support points kept per patch by [`Network::describe_cloud`].
    pub max_patch_points: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            transformer: TransformerConfig::default(),
            mlp_widths: vec![3, 16, 32],
            conv_layers: vec![
                ConvSpec::new(32, 64, [3, 3, 3], [1, 1, 2]),
                ConvSpec::new(64, 128, [3, 3, 3], [1, 2, 2]),
                ConvSpec::new(128, 128, [3, 3, 3], [1, 1, 1]),
                ConvSpec::new(128, 32, [1, 1, 1], [1, 1, 1]),
            ],
            output_dim: 32,
            l2_normalize: true,
            density_signature: false,
            mlp_instead_of_conv: false,
            max_patch_points: 2048,
        }
    }
}

impl DescriptorConfig {
    /// Small grid and network that train in minutes on one core.
    pub fn desk() -> Self {
        Self {
            transformer: TransformerConfig {
                support_radius: 0.3,
                radial_bins: 4,
                elevation_bins: 8,
                azimuth_bins: 32,
                voxel_radius: 0.1,
                samples_per_voxel: 12,
                ..TransformerConfig::default()
            },
            mlp_widths: vec![3, 16, 32],
            conv_layers: vec![
                ConvSpec::new(32, 32, [2, 3, 3], [1, 1, 2]),
                ConvSpec::new(32, 64, [2, 3, 3], [1, 1, 1]),
                ConvSpec::new(64, 64, [2, 3, 3], [1, 1, 1]),
                ConvSpec::new(64, 32, [1, 1, 1], [1, 1, 1]),
            ],
            output_dim: 32,
            ..Self::default()
        }
    }

    /// Convolutions actually built, after applying the ablation flags.
    pub fn effective_conv_layers(&self) -> Vec<ConvSpec> {
        let mut layers = self.conv_layers.clone();
        if let Some(first) = layers.first_mut() {
            first.in_channels = self.point_feature_width();
        }
        if self.mlp_instead_of_conv {
            for layer in &mut layers {
                layer.kernel = [1, 1, 1];
                layer.stride = [1, 1, 1];
            }
        }
        layers
    }

    /// Channels of the per-voxel feature map fed to the first convolution.
    pub fn point_feature_width(&self) -> usize {
        if self.density_signature {
            1
        } else {
            self.mlp_widths.last().copied().unwrap_or(0)
        }
    }

    /// Product of the azimuth strides: descriptors are exactly invariant to
    /// azimuth shifts that are multiples of this.
    pub fn azimuth_period(&self) -> usize {
        self.effective_conv_layers().iter().map(|c| c.stride[2]).product()
    }

    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        if !self.density_signature && (self.mlp_widths.len() < 2 || self.mlp_widths[0] != 3) {
            return Err(Error::invalid("point layers must start at width 3 and have at least one layer"));
        }
        if self.mlp_widths.iter().any(|&w| w == 0 || w > MAX_CHANNELS) {
            return Err(Error::invalid(format!("point-layer widths must lie in 1..={MAX_CHANNELS}")));
        }
        let layers = self.effective_conv_layers();
        if layers.is_empty() {
            return Err(Error::invalid("at least one convolution layer is required"));
        }
        let mut extent = [
            self.transformer.radial_bins,
            self.transformer.elevation_bins,
            self.transformer.azimuth_bins,
        ];
        let mut channels = self.point_feature_width();
        for (i, layer) in layers.iter().enumerate() {
            layer.validate()?;
            if layer.in_channels != channels {
                return Err(Error::invalid(format!(
                    "convolution {i} expects {} input channels, previous layer gives {channels}",
                    layer.in_channels
                )));
            }
            if layer.out_channels > MAX_CHANNELS {
                return Err(Error::invalid(format!("convolution {i} exceeds {MAX_CHANNELS} channels")));
            }
            extent = layer.output_extent(extent)?;
            channels = layer.out_channels;
        }
        if channels != self.output_dim {
            return Err(Error::invalid(format!(
                "last convolution gives {channels} channels, output_dim is {}",
                self.output_dim
            )));
        }
        if self.max_patch_points < 3 {
            return Err(Error::invalid("max_patch_points must be at least 3"));
        }
        Ok(())
    }
}

/// Parameter handles of a built network.
#[derive(Debug, Clone)]
struct Layout {
    mlp: Vec<(ParamId, ParamId)>,
    convs: Vec<(ConvSpec, ParamId, ParamId)>,
}

/// Descriptor network: configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Network {
    config: DescriptorConfig,
    params: ParamStore,
    layout: Layout,
}

/// Result of describing many anchors of one cloud.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptorSet {
    /// Anchor indices that produced a descriptor, in request order.
    pub anchors: Vec<usize>,
    /// `anchors.len() × dim` values.
    pub values: Vec<f64>,
    pub dim: usize,
    /// Anchors whose patch could not be described, with the reason.
    pub skipped: Vec<(usize, String)>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

fn param_names(cfg: &DescriptorConfig) -> (Vec<(String, String)>, Vec<(String, String)>) {
    let mlp = if cfg.density_signature {
        Vec::new()
    } else {
        (0..cfg.mlp_widths.len() - 1)
            .map(|i| (format!("point.{i}.weight"), format!("point.{i}.bias")))
            .collect()
    };
    let convs = (0..cfg.conv_layers.len())
        .map(|i| (format!("conv.{i}.weight"), format!("conv.{i}.bias")))
        .collect();
    (mlp, convs)
}

impl Network {
    /// He-initialized weights and zero biases, drawn from `seed`.
    pub fn new(config: DescriptorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let (mlp_names, conv_names) = param_names(&config);
        let init = |shape: &[usize], fan_in: usize, stream: u64| -> Tensor {
            let n: usize = shape.iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let mut rng = rng_for(seed, &[0x696e_6974, stream]);
            Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(&mut rng)).collect()).expect("shape")
        };
        let mut stream = 0;
        for (i, (wn, bn)) in mlp_names.iter().enumerate() {
            let (cin, cout) = (config.mlp_widths[i], config.mlp_widths[i + 1]);
            let w = init(&[cin, cout], cin, stream);
            stream += 1;
            params.add(wn.clone(), w)?;
            params.add(bn.clone(), Tensor::zeros(&[cout]))?;
        }
        for (spec, (wn, bn)) in config.effective_conv_layers().iter().zip(&conv_names) {
            let fan_in = spec.kernel.iter().product::<usize>() * spec.in_channels;
            let w = init(&spec.weight_shape(), fan_in, stream);
            stream += 1;
            params.add(wn.clone(), w)?;
            params.add(bn.clone(), Tensor::zeros(&[spec.out_channels]))?;
        }
        Self::from_params(config, params)
    }

    /// Binds existing parameters (e.g. a loaded checkpoint) to `config`.
    pub fn from_params(config: DescriptorConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let (mlp_names, conv_names) = param_names(&config);
        let check = |id: ParamId, shape: &[usize]| -> Result<()> {
            if params.value(id).shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {} has shape {:?}, configuration needs {shape:?}",
                    params.name(id),
                    params.value(id).shape()
                )));
            }
            Ok(())
        };
        let mut mlp = Vec::new();
        for (i, (wn, bn)) in mlp_names.iter().enumerate() {
            let (w, b) = (params.require(wn)?, params.require(bn)?);
            check(w, &[config.mlp_widths[i], config.mlp_widths[i + 1]])?;
            check(b, &[config.mlp_widths[i + 1]])?;
            mlp.push((w, b));
        }
        let mut convs = Vec::new();
        for (spec, (wn, bn)) in config.effective_conv_layers().into_iter().zip(&conv_names) {
            let (w, b) = (params.require(wn)?, params.require(bn)?);
            check(w, &spec.weight_shape())?;
            check(b, &[spec.out_channels])?;
            convs.push((spec, w, b));
        }
        let expected = 2 * (mlp.len() + convs.len());
        if params.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} parameters, configuration uses {expected}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            params,
            layout: Layout { mlp, convs },
        })
    }

    pub fn config(&self) -> &DescriptorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }

    /// Parameter ids grouped per layer (weight, bias), point layers first.
    pub fn layers(&self) -> Vec<(ParamId, ParamId)> {
        self.layout
            .mlp
            .iter()
            .copied()
            .chain(self.layout.convs.iter().map(|(_, w, b)| (*w, *b)))
            .collect()
    }

    /// Aligns `patch` around `anchor` and bins it.
    pub fn volume(&self, patch: &PointCloud, anchor: &Vec3) -> Result<CylindricalVolume> {
        let aligned = align_patch(patch, anchor, &self.config.transformer)?;
        let volume = build_cylindrical_volume(&aligned, &self.config.transformer)?;
        if volume.is_empty() {
            return Err(Error::EmptyVolume);
        }
        Ok(volume)
    }

    /// Per-voxel feature map `[J, K, L, D₀]` recorded on `graph`.
    pub fn record_point_layers(&self, graph: &mut Graph<'_>, volume: &CylindricalVolume) -> Result<NodeId> {
        let shape = [volume.radial_bins, volume.elevation_bins, volume.azimuth_bins];
        if self.config.density_signature {
            let kv = volume.samples_per_voxel as f64;
            let counts = volume.neighbors.iter().map(|&c| c as f64 / kv).collect();
            return Ok(graph.input(Tensor::new(vec![shape[0], shape[1], shape[2], 1], counts)?));
        }
        let scale = 1.0 / self.config.transformer.support_radius;
        let coords = volume
            .points
            .iter()
            .flat_map(|p| [p.x * scale, p.y * scale, p.z * scale])
            .collect();
        let mut x = graph.input(Tensor::new(vec![volume.points.len(), 3], coords)?);
        for &(w, b) in &self.layout.mlp {
            let h = graph.linear(x, w, b)?;
            x = graph.relu(h);
        }
        let width = self.config.point_feature_width();
        graph.segment_max(x, &volume.offsets, &[shape[0], shape[1], shape[2], width])
    }

    /// Convolutions, pooling and normalization on top of a feature map.
    pub fn record_head(&self, graph: &mut Graph<'_>, features: NodeId) -> Result<NodeId> {
        let mut x = features;
        let last = self.layout.convs.len() - 1;
        for (i, (spec, w, b)) in self.layout.convs.iter().enumerate() {
            x = graph.cyl_conv(x, spec, *w, *b)?;
            if i != last {
                x = graph.relu(x);
            }
        }
        let pooled = graph.global_max(x)?;
        if self.config.l2_normalize {
            graph.l2_normalize(pooled)
        } else {
            Ok(pooled)
        }
    }

    /// Full forward pass of one volume.
    pub fn record(&self, graph: &mut Graph<'_>, volume: &CylindricalVolume) -> Result<NodeId> {
        let features = self.record_point_layers(graph, volume)?;
        self.record_head(graph, features)
    }

    pub fn describe_volume(&self, volume: &CylindricalVolume) -> Result<Vec<f64>> {
        let mut graph = Graph::new(&self.params);
        let out = self.record(&mut graph, volume)?;
        Ok(graph.value(out).data().to_vec())
    }

    /// Descriptor of a support patch around `anchor`.
    pub fn describe(&self, patch: &PointCloud, anchor: &Vec3) -> Result<Vec<f64>> {
        let volume = self.volume(patch, anchor)?;
        self.describe_volume(&volume)
    }

    /// Support patch of `cloud` around point `anchor`, subsampled to at most
    /// `max_patch_points` with a draw keyed by the anchor index.
    pub fn support_patch(&self, cloud: &PointCloud, index: &SpatialIndex, anchor: usize) -> PointCloud {
        extract_patch(cloud, index, anchor, &self.config)
    }

    /// Describes every anchor of `cloud`; failed patches are reported in `skipped`.
    pub fn describe_cloud(&self, cloud: &PointCloud, index: &SpatialIndex, anchors: &[usize]) -> Result<DescriptorSet> {
        if let Some(&bad) = anchors.iter().find(|&&a| a >= cloud.len()) {
            return Err(Error::invalid(format!(
                "anchor {bad} out of range for a cloud of {} points",
                cloud.len()
            )));
        }
        let results: Vec<Result<Vec<f64>>> = anchors
            .par_iter()
            .map(|&a| {
                let patch = self.support_patch(cloud, index, a);
                self.describe(&patch, &cloud.points[a])
            })
            .collect();
        let dim = self.config.output_dim;
        let mut set = DescriptorSet {
            dim,
            ..DescriptorSet::default()
        };
        for (&a, r) in anchors.iter().zip(results) {
            match r {
                Ok(d) => {
                    set.anchors.push(a);
                    set.values.extend(d);
                }
                Err(e) => set.skipped.push((a, e.to_string())),
            }
        }
        Ok(set)
    }
}

pub(crate) fn extract_patch(cloud: &PointCloud, index: &SpatialIndex, anchor: usize, cfg: &DescriptorConfig) -> PointCloud {
    let center = cloud.points[anchor];
    let mut idx = index.radius_query(&center, cfg.transformer.support_radius);
    if idx.len() > cfg.max_patch_points {
        let mut rng = rng_for(cfg.transformer.seed, &[0x7061_7463_68, anchor as u64]);
        let mut picked = sample(&mut rng, idx.len(), cfg.max_patch_points).into_vec();
        picked.sort_unstable();
        idx = picked.into_iter().map(|i| idx[i]).collect();
    }
    cloud.select(&idx)
}

/// Writes descriptors in the `SPINDSC1` layout (values as 32-bit floats).
pub fn write_descriptors(path: &Path, set: &DescriptorSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DESCRIPTOR_MAGIC)?;
    w.write_all(&(set.anchors.len() as u64).to_le_bytes())?;
    w.write_all(&(set.dim as u64).to_le_bytes())?;
    for &a in &set.anchors {
        w.write_all(&(a as u64).to_le_bytes())?;
    }
    for &v in &set.values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_descriptors(path: &Path) -> Result<DescriptorSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DESCRIPTOR_MAGIC {
        return Err(Error::MagicMismatch {
            path: path.to_path_buf(),
            expected: "SPINDSC1".into(),
        });
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let n = next_u64(&mut r)? as usize;
    let dim = next_u64(&mut r)? as usize;
    let anchors = (0..n).map(|_| next_u64(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let mut buf = vec![0u8; n * dim * 4];
    r.read_exact(&mut buf)?;
    let values = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(DescriptorSet {
        anchors,
        values,
        dim,
        skipped: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_transform, random_rotation, rotation_about_axis, RigidTransform};
    use crate::transformer::estimate_reference_axis;
    use rand::Rng;
    use std::f64::consts::PI;

    /// Smooth bumpy surface patch around the origin, viewed from above.
    pub(crate) fn smooth_patch(seed: u64, n: usize, radius: f64) -> PointCloud {
        let mut rng = rng_for(seed, &[1]);
        let (a, b, c) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..PI));
        let mut pts = Vec::with_capacity(n);
        while pts.len() < n {
            let (x, y): (f64, f64) = (rng.random_range(-radius..radius), rng.random_range(-radius..radius));
            let z = 0.15 * (a * x + c).sin() * (b * y * 3.0).cos() + 0.3 * x * x - 0.2 * x * y;
            let p = Vec3::new(x, y, z);
            if p.norm() <= radius {
                pts.push(p);
            }
        }
        PointCloud::new(pts)
    }

    fn desk_net(seed: u64) -> Network {
        let mut cfg = DescriptorConfig::desk();
        cfg.transformer.viewpoint = [0.0, 0.0, 2.0];
        Network::new(cfg, seed).unwrap()
    }

    #[test]
    fn default_config_is_valid_and_capped() {
        DescriptorConfig::default().validate().unwrap();
        DescriptorConfig::desk().validate().unwrap();
        assert_eq!(DescriptorConfig::default().output_dim, 32);
        assert_eq!(DescriptorConfig::default().azimuth_period(), 4);
        let mut bad = DescriptorConfig::default();
        bad.conv_layers[1].out_channels = 256;
        bad.conv_layers[2].in_channels = 256;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ablation_configs_build() {
        for (density, mlp) in [(true, false), (false, true), (true, true)] {
            let cfg = DescriptorConfig {
                density_signature: density,
                mlp_instead_of_conv: mlp,
                ..DescriptorConfig::desk()
            };
            let net = Network::new(cfg, 1).unwrap();
            let patch = smooth_patch(3, 200, 0.3);
            let d = net.describe(&patch, &Vec3::zeros()).unwrap();
            assert_eq!(d.len(), 32);
        }
    }

    #[test]
    fn descriptor_is_unit_and_finite() {
        let net = desk_net(1);
        let d = net.describe(&smooth_patch(5, 300, 0.3), &Vec3::zeros()).unwrap();
        let n: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn grid_rotations_about_reference_axis_leave_descriptor_unchanged() {
        let net = desk_net(2);
        let l = net.config().transformer.azimuth_bins;
        let period = net.config().azimuth_period();
        for seed in 0..5 {
            let patch = smooth_patch(seed, 300, 0.3);
            let view = net.config().transformer.viewpoint();
            let axis = estimate_reference_axis(&patch, &view).unwrap();
            let base = net.describe(&patch, &Vec3::zeros()).unwrap();
            for i in (period..=l).step_by(period) {
                let rot = rotation_about_axis(&axis, 2.0 * PI * i as f64 / l as f64);
                let rotated = apply_transform(&RigidTransform::from_rotation(rot), &patch);
                let d = net.describe(&rotated, &Vec3::zeros()).unwrap();
                let dev = base.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(dev < 1e-9, "seed {seed} shift {i}: {dev}");
            }
        }
    }

    #[test]
    fn translation_is_ignored_bitwise() {
        let mut cfg = DescriptorConfig::desk();
        cfg.transformer.viewpoint = [0.0, 0.0, 2.0];
        let net = Network::new(cfg.clone(), 4).unwrap();
        // dyadic coordinates keep `p + t` and `(p + t) − (a + t)` exact
        let q = |v: f64| (v * 65536.0).round() / 65536.0;
        let patch = PointCloud::new(smooth_patch(9, 250, 0.29).iter().map(|p| p.map(q)).collect());
        let base = net.describe(&patch, &Vec3::zeros()).unwrap();
        let t = Vec3::new(4.0, -2.0, 8.0);
        cfg.transformer.viewpoint = [4.0, -2.0, 10.0];
        let moved_net = Network::from_params(cfg, net.params().clone()).unwrap();
        let moved = PointCloud::new(patch.iter().map(|p| p + t).collect());
        assert_eq!(base, moved_net.describe(&moved, &t).unwrap());
    }

    #[test]
    fn random_rotation_keeps_descriptor_close() {
        let mut net = desk_net(5);
        let mut rng = rng_for(11, &[]);
        let view = Vec3::new(0.0, 0.0, 2.0);
        for seed in 0..5 {
            let patch = smooth_patch(seed + 20, 400, 0.3);
            let base = net.describe(&patch, &Vec3::zeros()).unwrap();
            let rot = random_rotation(&mut rng);
            let rotated = apply_transform(&RigidTransform::from_rotation(rot), &patch);
            let v = rot * view;
            net.config.transformer.viewpoint = [v.x, v.y, v.z];
            let d = net.describe(&rotated, &Vec3::zeros()).unwrap();
            net.config.transformer.viewpoint = [0.0, 0.0, 2.0];
            let cos: f64 = base.iter().zip(&d).map(|(a, b)| a * b).sum();
            assert!(cos > 0.95, "seed {seed}: cosine {cos}");
        }
    }

    #[test]
    fn too_few_points_is_degenerate_and_empty_volume_errors() {
        let net = desk_net(1);
        let two = PointCloud::new(vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)]);
        assert!(matches!(net.describe(&two, &Vec3::zeros()), Err(Error::DegeneratePatch(_))));
        // three points far from every bin center of a coarse grid
        let cfg = DescriptorConfig {
            transformer: TransformerConfig {
                voxel_radius: 1e-4,
                ..DescriptorConfig::desk().transformer
            },
            ..DescriptorConfig::desk()
        };
        let net = Network::new(cfg, 1).unwrap();
        let tri = PointCloud::new(vec![
            Vec3::new(0.001, 0.0, 0.0),
            Vec3::new(0.0, 0.0013, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
        ]);
        assert!(matches!(net.describe(&tri, &Vec3::zeros()), Err(Error::EmptyVolume)));
    }

    fn cloud_for_batches() -> PointCloud {
        let mut rng = rng_for(8, &[]);
        PointCloud::new(
            (0..1500)
                .map(|_| {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    let y: f64 = rng.random_range(-1.0..1.0);
                    Vec3::new(x, y, 0.2 * (3.0 * x).sin() * (2.0 * y).cos() - 2.0)
                })
                .collect(),
        )
    }

    #[test]
    fn batch_matches_single_calls() {
        let mut cfg = DescriptorConfig::desk();
        cfg.max_patch_points = 100;
        let net = Network::new(cfg, 3).unwrap();
        let cloud = cloud_for_batches();
        let index = SpatialIndex::new(&cloud);
        let anchors: Vec<usize> = (0..20).map(|i| i * 71).collect();
        let set = net.describe_cloud(&cloud, &index, &anchors).unwrap();
        assert_eq!(set.anchors, anchors);
        for (i, &a) in anchors.iter().enumerate() {
            let patch = net.support_patch(&cloud, &index, a);
            assert!(patch.len() <= 100);
            assert_eq!(set.row(i), net.describe(&patch, &cloud.points[a]).unwrap().as_slice());
        }
        let single = net.describe_cloud(&cloud, &index, &[anchors[3]]).unwrap();
        assert_eq!(single.row(0), set.row(3));
        let dup = net.describe_cloud(&cloud, &index, &[5, 5]).unwrap();
        assert_eq!(dup.row(0), dup.row(1));
    }

    #[test]
    fn isolated_anchor_is_skipped_not_fatal() {
        let net = desk_net(1);
        let mut cloud = cloud_for_batches();
        cloud.points.push(Vec3::new(50.0, 50.0, 50.0));
        let index = SpatialIndex::new(&cloud);
        let last = cloud.len() - 1;
        let set = net.describe_cloud(&cloud, &index, &[0, last, 1]).unwrap();
        assert_eq!(set.anchors, vec![0, 1]);
        assert_eq!(set.skipped.len(), 1);
        assert_eq!(set.skipped[0].0, last);
    }

    #[test]
    fn checkpoint_rebinds_and_rejects_mismatch() {
        let net = desk_net(7);
        let again = Network::from_params(net.config().clone(), net.params().clone()).unwrap();
        let patch = smooth_patch(1, 200, 0.3);
        assert_eq!(net.describe(&patch, &Vec3::zeros()).unwrap(), again.describe(&patch, &Vec3::zeros()).unwrap());
        assert!(Network::from_params(DescriptorConfig::default(), net.params().clone()).is_err());
    }

    #[test]
    fn descriptor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let set = DescriptorSet {
            anchors: vec![4, 9],
            values: vec![0.5, -0.25, 1.0, 0.125],
            dim: 2,
            skipped: Vec::new(),
        };
        write_descriptors(&path, &set).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"SPINDSC1");
        assert_eq!(bytes.len(), 8 + 16 + 16 + 16);
        assert_eq!(read_descriptors(&path).unwrap(), set);
        std::fs::write(&path, b"NOTADESC").unwrap();
        assert!(matches!(read_descriptors(&path), Err(Error::MagicMismatch { .. })));
    }
}
