//! Central finite-difference checks of every differentiable engine op.
//!
//! Each check contracts the op output with a random cotangent `r`, so the
//! objective is `f = Σ r ⊙ op(inputs, params)`. Instances keep inputs away from
//! the kinks of ReLU, the max ops and the contrastive hinges, where the finite
//! difference would straddle a branch.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::engine::{ConvSpec, Graph, NodeId, ParamStore, Tensor};
use crate::error::Result;
use crate::rng::rng_for;

/// Step of the central difference.
pub const STEP: f64 = 1e-6;

/// Distance kept between inputs and any kink, far beyond [`STEP`].
const KINK_GAP: f64 = 1e-3;

pub const OPS: [&str; 9] = [
    "linear",
    "relu",
    "segment_max",
    "reshape",
    "cyl_conv",
    "global_max",
    "l2_normalize",
    "stack",
    "hardest_contrastive",
];

#[derive(Debug, Clone, Serialize)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    /// Coordinates compared across all instances.
    pub coordinates: usize,
    pub max_relative_error: f64,
}

/// `|a − n| / max(1, |a|, |n|)`: relative for large gradients, absolute below 1.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

type Build<'a> = dyn Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId> + 'a;

fn objective(inputs: &[Tensor], params: &ParamStore, build: &Build, r: &Tensor) -> Result<f64> {
    let mut g = Graph::new(params);
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &ids)?;
    Ok(g.value(out).data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Worst relative error over every input and parameter coordinate, and the
/// number of coordinates compared.
pub fn check_expression(
    inputs: &[Tensor],
    params: &ParamStore,
    build: &Build,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let mut g = Graph::new(params);
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &ids)?;
    let shape = g.value(out).shape().to_vec();
    let r = Tensor::new(shape, normals(rng, g.value(out).len()))?;
    let grads = g.backward(out, &r)?;

    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (k, id) in ids.iter().enumerate() {
        for e in 0..inputs[k].len() {
            let analytic = grads.node(*id).map_or(0.0, |t| t.data()[e]);
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= STEP;
            let numeric = (objective(&plus, params, build, &r)? - objective(&minus, params, build, &r)?) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic, numeric));
            count += 1;
        }
    }
    for pid in params.ids() {
        for e in 0..params.value(pid).len() {
            let analytic = grads.param(pid).map_or(0.0, |t| t.data()[e]);
            let mut plus = params.clone();
            plus.value_mut(pid).data_mut()[e] += STEP;
            let mut minus = params.clone();
            minus.value_mut(pid).data_mut()[e] -= STEP;
            let numeric = (objective(inputs, &plus, build, &r)? - objective(inputs, &minus, build, &r)?) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic, numeric));
            count += 1;
        }
    }
    Ok((worst, count))
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), normals(rng, shape.iter().product())).expect("shape matches data")
}

/// Values `0.1·π(i) + U(0, 0.01)` for a random permutation `π`: all distinct with gaps ≥ 0.09.
fn separated_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let data = order.iter().map(|&i| 0.1 * i as f64 - 0.05 * n as f64 + rng.random_range(0.0..0.01)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn pairwise(rows: &[f64], other: &[f64], d: usize, i: usize, j: usize) -> f64 {
    rows[i * d..(i + 1) * d]
        .iter()
        .zip(&other[j * d..(j + 1) * d])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Anchors, positives and margins with every hinge and hardest-negative choice
/// at least [`KINK_GAP`] from a tie.
fn contrastive_instance(rng: &mut ChaCha8Rng) -> (Tensor, Tensor, f64, f64) {
    loop {
        let n = rng.random_range(2..7);
        let d = rng.random_range(2..6);
        let a: Vec<f64> = normals(rng, n * d).iter().map(|v| 0.5 * v).collect();
        let p: Vec<f64> = a.iter().map(|v| v + 0.3 * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
        let (mp, mn) = (rng.random_range(0.0..0.5), rng.random_range(0.5..2.0));
        let clear = (0..n).all(|i| {
            let mut cands: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .flat_map(|j| [pairwise(&a, &p, d, i, j), pairwise(&a, &a, d, i, j)])
                .collect();
            cands.sort_by(f64::total_cmp);
            let unique = cands.len() < 2 || cands[1] - cands[0] > KINK_GAP;
            unique && (pairwise(&a, &p, d, i, i) - mp).abs() > KINK_GAP && (mn - cands[0]).abs() > KINK_GAP
        });
        if clear {
            return (
                Tensor::new(vec![n, d], a).expect("shape"),
                Tensor::new(vec![n, d], p).expect("shape"),
                mp,
                mn,
            );
        }
    }
}

/// One random instance of `op`; returns (worst relative error, coordinates).
pub fn check_instance(op: &str, rng: &mut ChaCha8Rng) -> Result<(f64, usize)> {
    let mut params = ParamStore::new();
    match op {
        "linear" => {
            let (n, cin, cout) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
            let w = params.add("w", normal_tensor(rng, &[cin, cout]))?;
            let b = params.add("b", normal_tensor(rng, &[cout]))?;
            let x = normal_tensor(rng, &[n, cin]);
            check_expression(&[x], &params, &|g, ids| g.linear(ids[0], w, b), rng)
        }
        "relu" => {
            let shape = [rng.random_range(1..5), rng.random_range(1..5)];
            let mut x = normal_tensor(rng, &shape);
            for v in x.data_mut() {
                *v = v.signum() * (v.abs() + 0.05);
            }
            check_expression(&[x], &params, &|g, ids| Ok(g.relu(ids[0])), rng)
        }
        "segment_max" => {
            let (rows, c) = (rng.random_range(1..12), rng.random_range(1..4));
            let mut offsets = vec![0, rows];
            for _ in 0..rng.random_range(0..5) {
                offsets.push(rng.random_range(0..=rows));
            }
            offsets.sort_unstable();
            let segs = offsets.len() - 1;
            let x = separated_tensor(rng, &[rows, c]);
            check_expression(&[x], &params, &|g, ids| g.segment_max(ids[0], &offsets, &[segs, c]), rng)
        }
        "reshape" => {
            let (a, b, c) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
            let x = normal_tensor(rng, &[a * b, c]);
            check_expression(&[x], &params, &|g, ids| g.reshape(ids[0], &[a, b * c]), rng)
        }
        "cyl_conv" => {
            let ext = [rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..7)];
            let kernel = [
                rng.random_range(1..=ext[0]),
                rng.random_range(1..=ext[1]),
                rng.random_range(1..=ext[2].min(4)),
            ];
            let stride = [rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..3)];
            let spec = ConvSpec::new(rng.random_range(1..4), rng.random_range(1..4), kernel, stride);
            let w = params.add("w", normal_tensor(rng, &spec.weight_shape()))?;
            let b = params.add("b", normal_tensor(rng, &[spec.out_channels]))?;
            let x = normal_tensor(rng, &[ext[0], ext[1], ext[2], spec.in_channels]);
            check_expression(&[x], &params, &|g, ids| g.cyl_conv(ids[0], &spec, w, b), rng)
        }
        "global_max" => {
            let shape = [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4)];
            let x = separated_tensor(rng, &shape);
            check_expression(&[x], &params, &|g, ids| g.global_max(ids[0]), rng)
        }
        "l2_normalize" => {
            let len = rng.random_range(1..8);
            let x = normal_tensor(rng, &[len]);
            check_expression(&[x], &params, &|g, ids| g.l2_normalize(ids[0]), rng)
        }
        "stack" => {
            let d = rng.random_range(1..5);
            let xs: Vec<Tensor> = (0..rng.random_range(1..5)).map(|_| normal_tensor(rng, &[d])).collect();
            check_expression(&xs, &params, &|g, ids| g.stack(ids), rng)
        }
        "hardest_contrastive" => {
            let (a, p, mp, mn) = contrastive_instance(rng);
            check_expression(&[a, p], &params, &|g, ids| g.hardest_contrastive(ids[0], ids[1], mp, mn), rng)
        }
        other => Err(crate::error::Error::invalid(format!("unknown op {other:?}"))),
    }
}

/// Runs `instances` seeded instances of every op.
pub fn check_all(seed: u64, instances: usize) -> Result<Vec<OpCheck>> {
    OPS.iter()
        .enumerate()
        .map(|(k, &op)| {
            let mut rng = rng_for(seed, &[0x6772_6164, k as u64]);
            let mut check = OpCheck {
                op,
                instances,
                coordinates: 0,
                max_relative_error: 0.0,
            };
            for _ in 0..instances {
                let (err, n) = check_instance(op, &mut rng)?;
                check.max_relative_error = check.max_relative_error.max(err);
                check.coordinates += n;
            }
            Ok(check)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        for c in check_all(11, 5).unwrap() {
            assert!(c.coordinates > 0, "{}", c.op);
            assert!(c.max_relative_error < 1e-6, "{}: {}", c.op, c.max_relative_error);
        }
    }

    #[test]
    fn harness_detects_a_missing_gradient_path() {
        // The detached copy feeds the output but never passes gradient back.
        let mut rng = rng_for(0, &[]);
        let x = Tensor::new(vec![1, 2], vec![0.7, 1.3]).unwrap();
        let leaky: &Build = &|g, ids| {
            let copy = g.input(g.value(ids[0]).clone());
            let a = g.reshape(ids[0], &[2])?;
            let b = g.reshape(copy, &[2])?;
            g.stack(&[a, b])
        };
        let (err, n) = check_expression(&[x], &ParamStore::new(), leaky, &mut rng).unwrap();
        assert_eq!(n, 2);
        assert!(err > 1e-3, "{err}");
    }

    #[test]
    fn relative_error_floors_at_one() {
        assert_eq!(relative_error(1e-9, 0.0), 1e-9);
        assert!((relative_error(200.0, 202.0) - 2.0 / 202.0).abs() < 1e-15);
    }
}
