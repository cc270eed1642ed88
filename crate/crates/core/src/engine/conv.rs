//! Cylindrical convolution kernels.
//!
//! Feature maps are `[radial, height, azimuth, channels]`, channels fastest.
//! Weights are `[R, Y, X, D_in, D_out]` so each kernel tap is a contiguous
//! `D_in × D_out` block. Radial and height axes use valid windows starting at
//! the output position; the azimuth axis wraps, with the window centered on
//! `l·stride` (offsets `x − ⌊(X−1)/2⌋`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Valid,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[R_s, Y_s, X_s]`: radial, height, azimuth extents.
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    #[serde(default = "default_boundary")]
    pub boundary: [Boundary; 3],
}

fn default_boundary() -> [Boundary; 3] {
    [Boundary::Valid, Boundary::Valid, Boundary::Periodic]
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            boundary: default_boundary(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.boundary != default_boundary() {
            return Err(Error::invalid(
                "cylindrical convolution must be valid on radial/height and periodic on azimuth",
            ));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::invalid("kernel extents and strides must be positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        [
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
            self.in_channels,
            self.out_channels,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }

    /// Output `[J', K', L']` for input extents `[J, K, L]`.
    pub fn output_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for axis in 0..3 {
            let (n, k, s) = (input[axis], self.kernel[axis], self.stride[axis]);
            out[axis] = match self.boundary[axis] {
                Boundary::Valid => {
                    if n < k {
                        return Err(Error::ShapeMismatch(format!(
                            "axis {axis}: extent {n} smaller than kernel {k}"
                        )));
                    }
                    (n - k) / s + 1
                }
                Boundary::Periodic => n.div_ceil(s),
            };
        }
        Ok(out)
    }

    /// `table[o * k + tap]` = input index read by output `o` at kernel tap `tap`.
    fn index_table(&self, axis: usize, n: usize, out: usize) -> Vec<usize> {
        let (k, s) = (self.kernel[axis], self.stride[axis]);
        let mut t = Vec::with_capacity(out * k);
        for o in 0..out {
            for tap in 0..k {
                let idx = match self.boundary[axis] {
                    Boundary::Valid => o * s + tap,
                    Boundary::Periodic => {
                        let c = (k as isize - 1) / 2;
                        (o as isize * s as isize + tap as isize - c).rem_euclid(n as isize) as usize
                    }
                };
                t.push(idx);
            }
        }
        t
    }
}

struct Tables {
    out: [usize; 3],
    j: Vec<usize>,
    k: Vec<usize>,
    l: Vec<usize>,
}

fn tables(spec: &ConvSpec, input: [usize; 3]) -> Result<Tables> {
    let out = spec.output_extent(input)?;
    Ok(Tables {
        out,
        j: spec.index_table(0, input[0], out[0]),
        k: spec.index_table(1, input[1], out[1]),
        l: spec.index_table(2, input[2], out[2]),
    })
}

fn check_input(spec: &ConvSpec, shape: &[usize]) -> Result<[usize; 3]> {
    spec.validate()?;
    if shape.len() != 4 || shape[3] != spec.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "conv expects [J, K, L, {}], got {shape:?}",
            spec.in_channels
        )));
    }
    Ok([shape[0], shape[1], shape[2]])
}

/// Returns the output extent and values.
pub fn conv_forward(
    spec: &ConvSpec,
    input_shape: &[usize],
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Result<([usize; 3], Vec<f64>)> {
    let ext = check_input(spec, input_shape)?;
    let t = tables(spec, ext)?;
    let [rs, ys, xs] = spec.kernel;
    let (din, dout) = (spec.in_channels, spec.out_channels);
    let [oj, ok, ol] = t.out;
    let mut out = vec![0.0; oj * ok * ol * dout];
    for a in 0..oj {
        for b in 0..ok {
            for c in 0..ol {
                let o = &mut out[((a * ok + b) * ol + c) * dout..][..dout];
                o.copy_from_slice(bias);
                for r in 0..rs {
                    let ij = t.j[a * rs + r];
                    for y in 0..ys {
                        let ik = t.k[b * ys + y];
                        for x in 0..xs {
                            let il = t.l[c * xs + x];
                            let inp = &input[((ij * ext[1] + ik) * ext[2] + il) * din..][..din];
                            let w = &weight[((r * ys + y) * xs + x) * din * dout..][..din * dout];
                            for (d, &v) in inp.iter().enumerate() {
                                if v == 0.0 {
                                    continue;
                                }
                                let row = &w[d * dout..(d + 1) * dout];
                                for (oe, we) in o.iter_mut().zip(row) {
                                    *oe += v * we;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((t.out, out))
}

/// Gradients with respect to input, weight and bias.
pub fn conv_backward(
    spec: &ConvSpec,
    input_shape: &[usize],
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let ext = check_input(spec, input_shape)?;
    let t = tables(spec, ext)?;
    let [rs, ys, xs] = spec.kernel;
    let (din, dout) = (spec.in_channels, spec.out_channels);
    let [oj, ok, ol] = t.out;
    let mut gin = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; dout];
    for a in 0..oj {
        for b in 0..ok {
            for c in 0..ol {
                let g = &grad_out[((a * ok + b) * ol + c) * dout..][..dout];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (gbe, ge) in gb.iter_mut().zip(g) {
                    *gbe += ge;
                }
                for r in 0..rs {
                    let ij = t.j[a * rs + r];
                    for y in 0..ys {
                        let ik = t.k[b * ys + y];
                        for x in 0..xs {
                            let il = t.l[c * xs + x];
                            let base = ((ij * ext[1] + ik) * ext[2] + il) * din;
                            let woff = ((r * ys + y) * xs + x) * din * dout;
                            for d in 0..din {
                                let row = &weight[woff + d * dout..woff + (d + 1) * dout];
                                let mut acc = 0.0;
                                for (we, ge) in row.iter().zip(g) {
                                    acc += we * ge;
                                }
                                gin[base + d] += acc;
                                let v = input[base + d];
                                if v != 0.0 {
                                    let grow = &mut gw[woff + d * dout..woff + (d + 1) * dout];
                                    for (gwe, ge) in grow.iter_mut().zip(g) {
                                        *gwe += v * ge;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gin, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct transcription of the windowed sum with explicit modular azimuth.
    fn naive(spec: &ConvSpec, shape: [usize; 4], x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let [j, k, l, din] = shape;
        let [rs, ys, xs] = spec.kernel;
        let [sj, sk, sl] = spec.stride;
        let oj = (j - rs) / sj + 1;
        let ok = (k - ys) / sk + 1;
        let ol = (l + sl - 1) / sl;
        let c = (xs as isize - 1) / 2;
        let dout = spec.out_channels;
        let mut out = vec![0.0; oj * ok * ol * dout];
        for a in 0..oj {
            for bb in 0..ok {
                for cc in 0..ol {
                    for e in 0..dout {
                        let mut s = b[e];
                        for d in 0..din {
                            for r in 0..rs {
                                for y in 0..ys {
                                    for xx in 0..xs {
                                        let il = ((cc * sl) as isize + xx as isize - c).rem_euclid(l as isize) as usize;
                                        let iv = x[(((a * sj + r) * k + bb * sk + y) * l + il) * din + d];
                                        let wv = w[(((r * ys + y) * xs + xx) * din + d) * dout + e];
                                        s += wv * iv;
                                    }
                                }
                            }
                        }
                        out[((a * ok + bb) * ol + cc) * dout + e] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let spec = ConvSpec::new(3, 3, [1, 1, 1], [1, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..2 * 3 * 4 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut w = vec![0.0; 9];
        for d in 0..3 {
            w[d * 3 + d] = 1.0;
        }
        let (_, y) = conv_forward(&spec, &[2, 3, 4, 3], &x, &w, &[0.0; 3]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn azimuth_kernel_wraps() {
        let l = 6;
        let spec = ConvSpec::new(1, 1, [1, 1, 3], [1, 1, 1]);
        let mut x = vec![0.0; l];
        x[l - 1] = 1.0; // 1-based l = L
        let (_, y) = conv_forward(&spec, &[1, 1, l, 1], &x, &[1.0; 3], &[0.0]).unwrap();
        let nonzero: Vec<usize> = (0..l).filter(|&i| y[i] != 0.0).map(|i| i + 1).collect();
        assert_eq!(nonzero, vec![1, l - 1, l]);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for case in 0..30 {
            let din = rng.random_range(1..4);
            let dout = rng.random_range(1..4);
            let kernel = [rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..4)];
            let stride = [rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..3)];
            let shape = [kernel[0] + rng.random_range(0..3), kernel[1] + rng.random_range(0..3), rng.random_range(1..7), din];
            let spec = ConvSpec::new(din, dout, kernel, stride);
            let n: usize = shape.iter().product();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..spec.weight_shape().iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..dout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, y) = conv_forward(&spec, &shape, &x, &w, &b).unwrap();
            let want = naive(&spec, shape, &x, &w, &b);
            assert_eq!(y.len(), want.len(), "case {case}");
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "case {case}");
            }
        }
    }

    #[test]
    fn rejects_short_radial_axis() {
        let spec = ConvSpec::new(1, 1, [3, 1, 1], [1, 1, 1]);
        assert!(matches!(
            conv_forward(&spec, &[2, 1, 4, 1], &[0.0; 8], &[0.0; 3], &[0.0]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            conv_forward(&spec, &[3, 1, 4, 2], &[0.0; 24], &[0.0; 3], &[0.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn output_extent_rules() {
        let spec = ConvSpec::new(1, 1, [3, 3, 3], [1, 2, 2]);
        assert_eq!(spec.output_extent([9, 40, 80]).unwrap(), [7, 19, 40]);
        assert_eq!(spec.output_extent([3, 3, 5]).unwrap(), [1, 1, 3]);
    }
}
