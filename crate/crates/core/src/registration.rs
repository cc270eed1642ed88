//! Descriptor matching, robust pose estimation and benchmark metrics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{kabsch, PointCloud, RigidTransform};
use crate::rng::rng_for;
use rand::Rng;

/// Putative matches between two clouds, as point indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondences {
    pub pairs: Vec<(usize, usize)>,
    /// Descriptor distance of each pair.
    pub distances: Vec<f64>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Rewrites row indices into point indices.
    pub fn remap(&self, rows_a: &[usize], rows_b: &[usize]) -> Correspondences {
        Correspondences {
            pairs: self.pairs.iter().map(|&(i, j)| (rows_a[i], rows_b[j])).collect(),
            distances: self.distances.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalThresholds {
    /// `τ₁`, meters.
    pub inlier_distance: f64,
    /// `τ₂`
    pub inlier_ratio: f64,
    /// Meters.
    pub max_translation_error: f64,
    /// Degrees.
    pub max_rotation_error: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        Self {
            inlier_distance: 0.10,
            inlier_ratio: 0.05,
            max_translation_error: 2.0,
            max_rotation_error: 5.0,
        }
    }
}

impl EvalThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.inlier_distance,
            self.inlier_ratio,
            self.max_translation_error,
            self.max_rotation_error,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("evaluation thresholds must be positive"))
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest row of `to` for every row of `from`; ties go to the lower index.
fn nearest_rows(from: &[f64], to: &[f64], dim: usize) -> Vec<(usize, f64)> {
    from.chunks_exact(dim)
        .map(|q| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, r) in to.chunks_exact(dim).enumerate() {
                let d = sq_dist(q, r);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

/// Pairs `(i, j)` where row `j` of `desc_b` is the nearest neighbour of row `i`
/// of `desc_a` and vice versa. Output is ordered by `i`.
pub fn mutual_nn(desc_a: &[f64], desc_b: &[f64], dim: usize) -> Correspondences {
    if dim == 0 || desc_a.is_empty() || desc_b.is_empty() {
        return Correspondences::default();
    }
    let ab = nearest_rows(desc_a, desc_b, dim);
    let ba = nearest_rows(desc_b, desc_a, dim);
    let mut out = Correspondences::default();
    for (i, &(j, d)) in ab.iter().enumerate() {
        if ba[j].0 == i {
            out.pairs.push((i, j));
            out.distances.push(d.sqrt());
        }
    }
    out
}

/// Fraction of pairs with `‖T a_i − b_j‖ < τ₁`; `None` for an empty set.
pub fn inlier_ratio(
    corr: &Correspondences,
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    gt: &RigidTransform,
    inlier_distance: f64,
) -> Option<f64> {
    if corr.is_empty() {
        return None;
    }
    let inliers = corr
        .pairs
        .iter()
        .filter(|&&(i, j)| (gt.apply(&cloud_a.points[i]) - cloud_b.points[j]).norm() < inlier_distance)
        .count();
    Some(inliers as f64 / corr.len() as f64)
}

/// One evaluated fragment pair.
#[derive(Debug, Clone, Copy)]
pub struct PairMatch<'a> {
    pub correspondences: &'a Correspondences,
    pub ground_truth: &'a RigidTransform,
    pub cloud_a: &'a PointCloud,
    pub cloud_b: &'a PointCloud,
}

/// Share of pairs whose inlier ratio exceeds `τ₂`, and each pair's ratio.
/// Pairs without correspondences count as not matched.
pub fn feature_matching_recall(pairs: &[PairMatch<'_>], thr: &EvalThresholds) -> (f64, Vec<Option<f64>>) {
    let ratios: Vec<Option<f64>> = pairs
        .iter()
        .map(|p| inlier_ratio(p.correspondences, p.cloud_a, p.cloud_b, p.ground_truth, thr.inlier_distance))
        .collect();
    (recall_from_ratios(&ratios, thr.inlier_ratio), ratios)
}

pub fn recall_from_ratios(ratios: &[Option<f64>], inlier_ratio: f64) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    let hits = ratios.iter().filter(|r| matches!(r, Some(v) if *v > inlier_ratio)).count();
    hits as f64 / ratios.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier distance in meters; hypotheses count pairs with residual ≤ this.
    pub inlier_distance: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            inlier_distance: 0.10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub transform: RigidTransform,
    /// Indices into the correspondence list supporting the best hypothesis.
    pub inliers: Vec<usize>,
}

/// Robust rigid fit: 3-pair Kabsch hypotheses scored by inlier count, then a
/// Kabsch refit on the winning inlier set. Ties keep the earliest hypothesis.
pub fn ransac_register(
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    corr: &Correspondences,
    cfg: &RansacConfig,
) -> Result<Registration> {
    let n = corr.len();
    if n < 3 {
        return Err(Error::NoConsensus(0));
    }
    let src: Vec<_> = corr.pairs.iter().map(|&(i, _)| cloud_a.points[i]).collect();
    let dst: Vec<_> = corr.pairs.iter().map(|&(_, j)| cloud_b.points[j]).collect();
    let mut rng = rng_for(cfg.seed, &[0x7261_6e73_6163]);
    let limit = cfg.inlier_distance * cfg.inlier_distance;
    let mut best: Option<(usize, RigidTransform)> = None;
    for _ in 0..cfg.iterations {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let mut c = rng.random_range(0..n - 2);
        for taken in [a.min(b), a.max(b)] {
            if c >= taken {
                c += 1;
            }
        }
        let Ok(h) = kabsch(&[src[a], src[b], src[c]], &[dst[a], dst[b], dst[c]]) else {
            continue;
        };
        let count = src
            .iter()
            .zip(&dst)
            .filter(|(s, d)| (h.apply(s) - *d).norm_squared() <= limit)
            .count();
        if best.as_ref().is_none_or(|(k, _)| count > *k) {
            best = Some((count, h));
        }
    }
    let Some((count, h)) = best else {
        return Err(Error::NoConsensus(0));
    };
    if count < 3 {
        return Err(Error::NoConsensus(count));
    }
    let inliers: Vec<usize> = (0..n)
        .filter(|&k| (h.apply(&src[k]) - dst[k]).norm_squared() <= limit)
        .collect();
    let s: Vec<_> = inliers.iter().map(|&k| src[k]).collect();
    let d: Vec<_> = inliers.iter().map(|&k| dst[k]).collect();
    let transform = kabsch(&s, &d).unwrap_or(h);
    Ok(Registration { transform, inliers })
}

/// `(RRE in degrees, RTE in meters)`.
pub fn pose_errors(est: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    let cos = (((est.rotation.transpose() * gt.rotation).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    (cos.acos().to_degrees(), (est.translation - gt.translation).norm())
}

/// Share of registrations with RTE and RRE below their bounds; `None` entries
/// are failed registrations and count against the rate.
pub fn success_rate(errors: &[Option<(f64, f64)>], thr: &EvalThresholds) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    let ok = errors.iter().filter(|e| is_success(**e, thr)).count();
    ok as f64 / errors.len() as f64
}

fn is_success(e: Option<(f64, f64)>, thr: &EvalThresholds) -> bool {
    matches!(e, Some((rre, rte)) if rte < thr.max_translation_error && rre < thr.max_rotation_error)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub name: String,
    pub correspondences: usize,
    pub inlier_ratio: Option<f64>,
    pub matched: bool,
    pub rre: Option<f64>,
    pub rte: Option<f64>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: EvalThresholds,
    pub pairs: Vec<PairReport>,
    pub fmr: f64,
    pub rre_mean: Option<f64>,
    pub rre_std: Option<f64>,
    pub rte_mean: Option<f64>,
    pub rte_std: Option<f64>,
    pub success_rate: f64,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

impl EvalReport {
    /// Builds a report from per-pair `(name, correspondence count, inlier ratio, pose errors)`.
    pub fn new(thresholds: EvalThresholds, entries: Vec<(String, usize, Option<f64>, Option<(f64, f64)>)>) -> Self {
        let pairs: Vec<PairReport> = entries
            .into_iter()
            .map(|(name, count, ratio, errors)| PairReport {
                name,
                correspondences: count,
                inlier_ratio: ratio,
                matched: matches!(ratio, Some(v) if v > thresholds.inlier_ratio),
                rre: errors.map(|e| e.0),
                rte: errors.map(|e| e.1),
                success: is_success(errors, &thresholds),
            })
            .collect();
        let ratios: Vec<_> = pairs.iter().map(|p| p.inlier_ratio).collect();
        let errors: Vec<_> = pairs.iter().map(|p| p.rre.zip(p.rte)).collect();
        let rre: Vec<f64> = pairs.iter().filter_map(|p| p.rre).collect();
        let rte: Vec<f64> = pairs.iter().filter_map(|p| p.rte).collect();
        let (rre_mean, rre_std) = mean_std(&rre);
        let (rte_mean, rte_std) = mean_std(&rte);
        Self {
            fmr: recall_from_ratios(&ratios, thresholds.inlier_ratio),
            success_rate: success_rate(&errors, &thresholds),
            thresholds,
            pairs,
            rre_mean,
            rre_std,
            rte_mean,
            rte_std,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["name", "correspondences", "inlier_ratio", "matched", "rre", "rte", "success"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.pairs {
            w.write_record([
                p.name.clone(),
                p.correspondences.to_string(),
                opt(p.inlier_ratio),
                p.matched.to_string(),
                opt(p.rre),
                opt(p.rte),
                p.success.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
