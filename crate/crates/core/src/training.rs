//! Contrastive training on overlapping fragment pairs.
//!
//! Each step takes the anchor pairs of `pairs_per_batch` fragment pairs,
//! describes both sides, and minimizes the hardest-in-batch contrastive loss.
//! Patches are forwarded and back-propagated independently in parallel; their
//! parameter gradients are summed in batch order so results do not depend on
//! scheduling.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{extract_patch, DescriptorConfig, Network};
use crate::engine::{AdamConfig, Graph, ParamGrads, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform, Vec3};
use crate::io::PairManifest;
use crate::rng::rng_for;
use crate::spatial::{median_spacing, SpatialIndex};
use crate::transformer::CylindricalVolume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub anchors_per_pair: usize,
    /// Support points kept per patch.
    pub patch_points: usize,
    pub pairs_per_batch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub pos_margin: f64,
    pub neg_margin: f64,
    /// Anchors of one fragment are at least this far apart, in meters, so that
    /// in-batch negatives are genuinely different places.
    pub min_anchor_separation: f64,
    /// Pairs at or below this overlap are not used.
    pub min_overlap: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            anchors_per_pair: 20,
            patch_points: 2048,
            pairs_per_batch: 1,
            epochs: 20,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 5,
            pos_margin: 0.1,
            neg_margin: 1.4,
            min_anchor_separation: 0.1,
            min_overlap: 0.3,
            validation_fraction: 0.1,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults for the desk preset: the small network converges too slowly at
    /// 1e-3 within 20 epochs, so the initial rate is doubled.
    pub fn desk() -> Self {
        Self {
            learning_rate: 2e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.pos_margin && self.pos_margin < self.neg_margin) {
            return Err(Error::invalid("margins must satisfy 0 < pos_margin < neg_margin"));
        }
        if self.anchors_per_pair < 2 || self.pairs_per_batch == 0 || self.lr_decay_every == 0 {
            return Err(Error::invalid(
                "need at least 2 anchors, 1 pair per batch and a positive decay interval",
            ));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("learning rate must be positive and validation_fraction in [0, 1)"));
        }
        Ok(())
    }

    /// Step size used throughout `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Fragment pair held in memory.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub frag_a: PointCloud,
    pub frag_b: PointCloud,
    pub transform: RigidTransform,
    pub overlap: f64,
}

impl TrainingPair {
    pub fn load_all(manifest: &PairManifest) -> Result<Vec<TrainingPair>> {
        (0..manifest.len())
            .map(|i| {
                let (frag_a, frag_b) = manifest.load_pair(i)?;
                Ok(TrainingPair {
                    frag_a,
                    frag_b,
                    transform: manifest.pairs[i].transform,
                    overlap: manifest.pairs[i].overlap,
                })
            })
            .collect()
    }
}

/// Corresponding anchors: point `anchor_a` of A matches point `anchor_b` of B.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPair {
    pub anchor_a: usize,
    pub anchor_b: usize,
    /// Ground-truth distance between the transformed A anchor and the B anchor.
    pub distance: f64,
}

/// Draws `count` anchors of A whose transformed position has a B point within
/// `2 ×` B's median spacing; the nearest such point is the partner.
pub fn sample_anchor_pairs(
    pair: &TrainingPair,
    count: usize,
    min_separation: f64,
    seed: u64,
    path: &[u64],
) -> Result<Vec<AnchorPair>> {
    let index_b = SpatialIndex::new(&pair.frag_b);
    let tol = 2.0 * median_spacing(&pair.frag_b);
    let mut candidates: Vec<AnchorPair> = pair
        .frag_a
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (j, d) = index_b.nearest(&pair.transform.apply(p))?;
            (d <= tol).then_some(AnchorPair {
                anchor_a: i,
                anchor_b: j,
                distance: d,
            })
        })
        .collect();
    let mut rng = rng_for(seed, path);
    candidates.shuffle(&mut rng);
    let mut chosen: Vec<AnchorPair> = Vec::with_capacity(count);
    for c in candidates {
        if chosen.len() == count {
            break;
        }
        let p = pair.frag_a.points[c.anchor_a];
        if chosen
            .iter()
            .all(|o| (pair.frag_a.points[o.anchor_a] - p).norm() >= min_separation)
        {
            chosen.push(c);
        }
    }
    if chosen.len() < count {
        return Err(Error::InsufficientOverlap {
            requested: count,
            available: chosen.len(),
        });
    }
    Ok(chosen)
}

/// `[N, D]` anchors and positives through the hardest-in-batch contrastive loss.
pub fn hardest_contrastive_loss(anchors: &[Vec<f64>], positives: &[Vec<f64>], pos_margin: f64, neg_margin: f64) -> Result<f64> {
    let (a, p) = (stack_rows(anchors)?, stack_rows(positives)?);
    let mut g = Graph::detached();
    let (a, p) = (g.input(a), g.input(p));
    let loss = g.hardest_contrastive(a, p, pos_margin, neg_margin)?;
    Ok(g.value(loss).item())
}

fn stack_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
    let dim = rows.first().map_or(0, Vec::len);
    Tensor::new(vec![rows.len(), dim], rows.concat())
}

/// Volumes for one batch: `(anchor side, positive side)` per correspondence.
pub struct Batch {
    pub anchors: Vec<CylindricalVolume>,
    pub positives: Vec<CylindricalVolume>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Builds the volumes of up to `count` anchor pairs of `pair`, skipping anchors
/// whose patches cannot be binned on either side.
pub fn build_batch(
    net: &Network,
    pair: &TrainingPair,
    cfg: &TrainConfig,
    path: &[u64],
) -> Result<Batch> {
    // Draw a few spares so that skipped patches do not shrink the batch.
    let spares = cfg.anchors_per_pair / 4 + 2;
    let drawn = match sample_anchor_pairs(pair, cfg.anchors_per_pair + spares, cfg.min_anchor_separation, cfg.seed, path) {
        Ok(d) => d,
        Err(Error::InsufficientOverlap { .. }) => {
            sample_anchor_pairs(pair, cfg.anchors_per_pair, cfg.min_anchor_separation, cfg.seed, path)?
        }
        Err(e) => return Err(e),
    };
    let mut dcfg = net.config().clone();
    dcfg.max_patch_points = cfg.patch_points;
    let (ia, ib) = (SpatialIndex::new(&pair.frag_a), SpatialIndex::new(&pair.frag_b));
    let volumes: Vec<Option<(CylindricalVolume, CylindricalVolume)>> = drawn
        .par_iter()
        .map(|ap| {
            let va = net.volume(&extract_patch(&pair.frag_a, &ia, ap.anchor_a, &dcfg), &pair.frag_a.points[ap.anchor_a]);
            let vb = net.volume(&extract_patch(&pair.frag_b, &ib, ap.anchor_b, &dcfg), &pair.frag_b.points[ap.anchor_b]);
            va.ok().zip(vb.ok())
        })
        .collect();
    let mut batch = Batch {
        anchors: Vec::new(),
        positives: Vec::new(),
    };
    for (a, b) in volumes.into_iter().flatten().take(cfg.anchors_per_pair) {
        batch.anchors.push(a);
        batch.positives.push(b);
    }
    Ok(batch)
}

/// Loss of a batch and the summed parameter gradients.
pub fn batch_gradients(net: &Network, batch: &Batch, cfg: &TrainConfig) -> Result<(f64, ParamGrads)> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let forward = |v: &CylindricalVolume| -> Result<(Graph<'_>, crate::engine::NodeId)> {
        let mut g = Graph::new(net.params());
        let out = net.record(&mut g, v)?;
        Ok((g, out))
    };
    let volumes: Vec<&CylindricalVolume> = batch.anchors.iter().chain(&batch.positives).collect();
    let graphs: Vec<(Graph<'_>, crate::engine::NodeId)> =
        volumes.par_iter().map(|v| forward(v)).collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = graphs.iter().map(|(g, o)| g.value(*o).data().to_vec()).collect();

    let mut lg = Graph::detached();
    let a = lg.input(stack_rows(&rows[..n])?);
    let p = lg.input(stack_rows(&rows[n..])?);
    let loss = lg.hardest_contrastive(a, p, cfg.pos_margin, cfg.neg_margin)?;
    let grads = lg.backward_scalar(loss)?;
    let dim = rows[0].len();
    let upstream = |k: usize| -> Tensor {
        let (t, row) = if k < n { (a, k) } else { (p, k - n) };
        let g = grads.node(t).map(|g| g.data()[row * dim..(row + 1) * dim].to_vec());
        Tensor::vector(g.unwrap_or_else(|| vec![0.0; dim]))
    };
    let per_patch: Vec<ParamGrads> = graphs
        .par_iter()
        .enumerate()
        .map(|(k, (g, out))| g.backward(*out, &upstream(k)).map(|gr| gr.params))
        .collect::<Result<_>>()?;
    let mut total = ParamGrads::default();
    for g in &per_patch {
        total.merge(g);
    }
    Ok((lg.value(loss).item(), total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<LossRecord>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean validation loss per epoch (empty without validation pairs).
    pub validation_losses: Vec<f64>,
    /// Epoch (0-based) whose parameters `network` holds.
    pub best_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
}

/// Seeded train/validation split of `n` pairs: `(train, validation)` indices.
pub fn split_pairs(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = if n < 2 || fraction <= 0.0 {
        0
    } else {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    };
    let mut rng = rng_for(seed, &[0x7370_6c69_74]);
    let mut val = sample(&mut rng, n, n_val).into_vec();
    val.sort_unstable();
    let train = (0..n).filter(|i| !val.contains(i)).collect();
    (train, val)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    descriptor: &'a DescriptorConfig,
    training: &'a TrainConfig,
}

/// Trains `net` in place on `pairs`. With `out_dir`, writes `epoch_XX.ckpt`,
/// `best.ckpt`, `loss_history.csv` and `config.toml` there.
pub fn train_pairs(mut net: Network, pairs: &[TrainingPair], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let usable: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].overlap > cfg.min_overlap).collect();
    if usable.is_empty() {
        return Err(Error::invalid("no pair with enough overlap to train on"));
    }
    let (train_idx, val_idx) = {
        let (t, v) = split_pairs(usable.len(), cfg.validation_fraction, cfg.seed);
        (
            t.into_iter().map(|k| usable[k]).collect::<Vec<_>>(),
            v.into_iter().map(|k| usable[k]).collect::<Vec<_>>(),
        )
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let text = toml::to_string(&Sidecar {
            descriptor: net.config(),
            training: cfg,
        })
        .map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(dir.join("config.toml"), text)?;
    }
    // Validation anchors are fixed for the whole run.
    let val_batches: Vec<Batch> = val_idx
        .iter()
        .map(|&i| build_batch(&net, &pairs[i], cfg, &[0x76616c, i as u64]))
        .collect::<Result<_>>()?;

    let mut history = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut validation_losses = Vec::new();
    let mut best: Option<(f64, usize, crate::engine::ParamStore)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_for(cfg.seed, &[0x6f72_6465_72, epoch as u64]));
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.pairs_per_batch) {
            let mut batch = Batch {
                anchors: Vec::new(),
                positives: Vec::new(),
            };
            for &i in chunk {
                let b = build_batch(&net, &pairs[i], cfg, &[epoch as u64, i as u64])?;
                batch.anchors.extend(b.anchors);
                batch.positives.extend(b.positives);
            }
            let (loss, grads) = batch_gradients(&net, &batch, cfg)?;
            if !loss.is_finite() {
                return Err(Error::invalid(format!("loss diverged at step {step}")));
            }
            let params = net.params_mut();
            params.accumulate(&grads);
            params.adam_step(lr, &cfg.adam);
            history.push(LossRecord { step, epoch, loss, lr });
            sum += loss;
            steps += 1;
            step += 1;
        }
        let train_mean = sum / steps.max(1) as f64;
        epoch_losses.push(train_mean);
        let score = if val_batches.is_empty() {
            train_mean
        } else {
            let mut total = 0.0;
            for b in &val_batches {
                total += batch_loss(&net, b, cfg)?;
            }
            let v = total / val_batches.len() as f64;
            validation_losses.push(v);
            v
        };
        if let Some(dir) = out_dir {
            net.params().save_checkpoint(&dir.join(format!("epoch_{:02}.ckpt", epoch + 1)))?;
        }
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, net.params().clone()));
            if let Some(dir) = out_dir {
                net.params().save_checkpoint(&dir.join("best.ckpt"))?;
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            net = Network::from_params(net.config().clone(), params)?;
            epoch
        }
        None => 0,
    };
    let best_checkpoint = match out_dir {
        Some(dir) => {
            write_history(&dir.join("loss_history.csv"), &history)?;
            (cfg.epochs > 0).then(|| dir.join("best.ckpt"))
        }
        None => None,
    };
    Ok(TrainOutcome {
        network: net,
        history,
        epoch_losses,
        validation_losses,
        best_epoch,
        best_checkpoint,
    })
}

/// Loss of a batch without gradients.
pub fn batch_loss(net: &Network, batch: &Batch, cfg: &TrainConfig) -> Result<f64> {
    let describe = |v: &CylindricalVolume| net.describe_volume(v);
    let a: Vec<Vec<f64>> = batch.anchors.par_iter().map(describe).collect::<Result<_>>()?;
    let p: Vec<Vec<f64>> = batch.positives.par_iter().map(describe).collect::<Result<_>>()?;
    hardest_contrastive_loss(&a, &p, cfg.pos_margin, cfg.neg_margin)
}

/// Trains from a manifest file.
pub fn train(manifest: &PairManifest, descriptor: DescriptorConfig, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    if manifest.is_empty() {
        return Err(Error::invalid("manifest has no pairs"));
    }
    let pairs = TrainingPair::load_all(manifest)?;
    let net = Network::new(descriptor, cfg.seed)?;
    train_pairs(net, &pairs, cfg, Some(out_dir))
}

pub fn write_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Convenience used by tests and examples: the anchor point of each side.
pub fn anchor_points(pair: &TrainingPair, anchors: &[AnchorPair]) -> Vec<(Vec3, Vec3)> {
    anchors
        .iter()
        .map(|a| (pair.frag_a.points[a.anchor_a], pair.frag_b.points[a.anchor_b]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply_transform;
    use crate::synth::{synth_pair, SyntheticSceneSpec};

    fn pair(seed: u64, overlap: f64) -> (TrainingPair, Vec<bool>) {
        let s = synth_pair(&SyntheticSceneSpec {
            seed,
            overlap,
            points_per_fragment: 1200,
            ..SyntheticSceneSpec::default()
        })
        .unwrap();
        (
            TrainingPair {
                frag_a: s.frag_a,
                frag_b: s.frag_b,
                transform: s.transform,
                overlap,
            },
            s.overlap_mask,
        )
    }

    fn small_net(seed: u64) -> Network {
        Network::new(DescriptorConfig::desk(), seed).unwrap()
    }

    #[test]
    fn identical_clouds_give_zero_distance_partners() {
        let (p, _) = pair(1, 0.5);
        let same = TrainingPair {
            frag_b: apply_transform(&p.transform, &p.frag_a),
            ..p
        };
        let anchors = sample_anchor_pairs(&same, 20, 0.0, 3, &[]).unwrap();
        assert!(anchors.iter().all(|a| a.distance < 1e-12));
    }

    #[test]
    fn disjoint_fragments_have_no_anchors() {
        let (mut p, _) = pair(2, 0.5);
        p.transform.translation += Vec3::new(100.0, 0.0, 0.0);
        assert!(matches!(
            sample_anchor_pairs(&p, 5, 0.0, 0, &[]),
            Err(Error::InsufficientOverlap { available: 0, .. })
        ));
    }

    #[test]
    fn anchors_lie_in_the_generated_overlap() {
        let (p, mask) = pair(3, 0.5);
        let anchors = sample_anchor_pairs(&p, 20, 0.1, 5, &[1]).unwrap();
        assert_eq!(anchors.len(), 20);
        assert!(anchors.iter().all(|a| mask[a.anchor_a]));
        for (i, x) in anchors.iter().enumerate() {
            for y in &anchors[i + 1..] {
                assert!((p.frag_a.points[x.anchor_a] - p.frag_a.points[y.anchor_a]).norm() >= 0.1);
            }
        }
    }

    #[test]
    fn loss_hand_values() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(hardest_contrastive_loss(&a, &a, 0.1, 1.4).unwrap(), (1.4 - 2f64.sqrt()).max(0.0).powi(2));
        let far = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(hardest_contrastive_loss(&far, &far, 0.1, 1.4).unwrap(), 0.0);
        assert!(matches!(
            hardest_contrastive_loss(&a[..1], &a[..1], 0.1, 1.4),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn every_layer_receives_gradient() {
        let net = small_net(4);
        let (p, _) = pair(5, 0.5);
        let cfg = TrainConfig::default();
        let batch = build_batch(&net, &p, &cfg, &[0]).unwrap();
        assert_eq!(batch.len(), 20);
        let (loss, grads) = batch_gradients(&net, &batch, &cfg).unwrap();
        assert!(loss > 0.0);
        for (w, _) in net.layers() {
            let g = grads.get(w).expect("gradient present");
            assert!(g.data().iter().any(|v| *v != 0.0), "{} has no gradient", net.params().name(w));
        }
    }

    #[test]
    fn schedule_halves_every_five_epochs() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 1e-3);
        assert_eq!(cfg.learning_rate_at(4), 1e-3);
        assert_eq!(cfg.learning_rate_at(5), 5e-4);
        assert_eq!(cfg.learning_rate_at(19), 1.25e-4);
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (t, v) = split_pairs(20, 0.1, 3);
        assert_eq!(v.len(), 2);
        assert_eq!(t.len(), 18);
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(split_pairs(20, 0.1, 3), (t, v));
        assert_eq!(split_pairs(1, 0.1, 3).1.len(), 0);
        assert_eq!(split_pairs(3, 0.1, 3).1.len(), 1);
    }

    #[test]
    fn smoke_run_is_finite_and_deterministic() {
        let pairs: Vec<TrainingPair> = (0..2).map(|s| pair(10 + s, 0.5).0).collect();
        let cfg = TrainConfig {
            epochs: 1,
            anchors_per_pair: 6,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let run = |out: Option<&Path>| train_pairs(small_net(1), &pairs, &cfg, out).unwrap();
        let first = run(Some(dir.path()));
        assert!(first.history.iter().all(|r| r.loss.is_finite()));
        assert_eq!(first.history.len(), 1);
        let second = run(None);
        assert_eq!(first.history, second.history);
        assert!(dir.path().join("best.ckpt").exists());
        assert!(dir.path().join("epoch_01.ckpt").exists());
        assert!(dir.path().join("config.toml").exists());
        assert_eq!(read_history(&dir.path().join("loss_history.csv")).unwrap(), first.history);
        let header = std::fs::read_to_string(dir.path().join("loss_history.csv")).unwrap();
        assert!(header.starts_with("step,epoch,loss,lr\n"));
    }
}
