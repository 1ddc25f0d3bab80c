//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use hcdnn::autograd::{Scalar, Tape, Tensor, Var};
use hcdnn::volio::Mask;
use rand::Rng;

/// Direct-loop cross-correlation: `y[o,p,q] = b[o] + Σ k[o,c,u,v]·x[c,p+u−pad,q+v−pad]`.
pub fn naive_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, pad: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.dims4().unwrap();
    let [o, _, kh, kw] = k.dims4().unwrap();
    let (oh, ow) = (h + 2 * pad + 1 - kh, w + 2 * pad + 1 - kw);
    let mut y = vec![0.0; n * o * oh * ow];
    for bi in 0..n {
        for oc in 0..o {
            for p in 0..oh {
                for q in 0..ow {
                    let mut s = b.data()[oc];
                    for ci in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let (r, col) = (p + u, q + v);
                                if r < pad || col < pad || r - pad >= h || col - pad >= w {
                                    continue;
                                }
                                s += k.data()[((oc * c + ci) * kh + u) * kw + v]
                                    * x.data()[((bi * c + ci) * h + r - pad) * w + col - pad];
                            }
                        }
                    }
                    y[((bi * o + oc) * oh + p) * ow + q] = s;
                }
            }
        }
    }
    Tensor::new(&[n, o, oh, ow], y).unwrap()
}

/// Direct-loop scatter form of the stride-1 transposed convolution with an
/// `[in, out, kh, kw]` kernel: `y[o, p+u−pad, q+v−pad] += x[i,p,q]·k[i,o,u,v]`.
pub fn naive_conv_transpose2d(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, pad: usize) -> Tensor<f64> {
    let [n, ci, h, w] = x.dims4().unwrap();
    let [_, o, kh, kw] = k.dims4().unwrap();
    let (oh, ow) = (h + kh - 1 - 2 * pad, w + kw - 1 - 2 * pad);
    let mut y = vec![0.0; n * o * oh * ow];
    for bi in 0..n {
        for oc in 0..o {
            for i in 0..oh * ow {
                y[(bi * o + oc) * oh * ow + i] = b.data()[oc];
            }
        }
        for i in 0..ci {
            for p in 0..h {
                for q in 0..w {
                    let xv = x.data()[((bi * ci + i) * h + p) * w + q];
                    for oc in 0..o {
                        for u in 0..kh {
                            for v in 0..kw {
                                let (r, c) = (p + u, q + v);
                                if r < pad || c < pad || r - pad >= oh || c - pad >= ow {
                                    continue;
                                }
                                y[((bi * o + oc) * oh + r - pad) * ow + c - pad] +=
                                    xv * k.data()[((i * o + oc) * kh + u) * kw + v];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, o, oh, ow], y).unwrap()
}

pub fn random_tensor<T: Scalar, R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::from_f64(rng.random_range(lo..hi))).collect()).unwrap()
}

/// Builds the op under test from fresh leaves and returns its output var.
pub type Op<'a, T> = dyn Fn(&mut Tape<T>, &[Var]) -> Var + 'a;

/// Norm-wise relative error `‖a − b‖ / max(‖a‖ + ‖b‖, tiny)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central finite differences of `L = Σ wᵢ yᵢ` (or of a scalar output as
/// is) against the tape gradients of every input. Returns the worst
/// relative error over the inputs.
pub fn grad_check<T: Scalar>(inputs: &[Tensor<T>], weights_seed: u64, h: f64, op: &Op<'_, T>) -> f64 {
    use rand::SeedableRng;
    let forward = |vals: &[Tensor<T>]| -> Tensor<T> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let y = op(&mut tape, &vars);
        tape.take_value(y)
    };
    let probe = forward(inputs);
    let mut wrng = rand_chacha::ChaCha8Rng::seed_from_u64(weights_seed);
    let weights: Vec<f64> =
        if probe.len() == 1 { vec![1.0] } else { (0..probe.len()).map(|_| wrng.random_range(-1.0..1.0)).collect() };
    let objective =
        |y: &Tensor<T>| -> f64 { y.data().iter().zip(&weights).map(|(&v, &w)| v.as_f64() * w).sum() };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let y = op(&mut tape, &vars);
    let loss = if probe.len() == 1 {
        y
    } else {
        let w: Vec<T> = weights.iter().map(|&w| T::from_f64(w)).collect();
        tape.dot(y, &w).unwrap()
    };
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (idx, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = tape.grad(*var).unwrap().iter().map(|g| g.as_f64()).collect();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let base = inputs[idx].data()[j].as_f64();
            plus[idx].data_mut()[j] = T::from_f64(base + h);
            minus[idx].data_mut()[j] = T::from_f64(base - h);
            // Divide by the step actually representable in T.
            let step = plus[idx].data()[j].as_f64() - minus[idx].data()[j].as_f64();
            *slot = (objective(&forward(&plus)) - objective(&forward(&minus))) / step;
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// 1 if the mask is non-empty at every point in the iterator, etc.: plain
/// set-counting versions of the overlap metrics.
pub fn brute_counts(a: &Mask, b: &Mask) -> (usize, usize, usize, usize) {
    let (mut na, mut nb, mut inter, mut union) = (0, 0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    (na, nb, inter, union)
}

pub fn brute_dice(a: &Mask, b: &Mask) -> f64 {
    let (na, nb, inter, _) = brute_counts(a, b);
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

pub fn brute_voe(a: &Mask, b: &Mask) -> f64 {
    let (_, _, inter, union) = brute_counts(a, b);
    if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

pub fn brute_rvd(a: &Mask, b: &Mask) -> Option<f64> {
    let (na, nb, _, _) = brute_counts(a, b);
    (nb > 0).then(|| (na as f64 - nb as f64) / nb as f64)
}

/// Surface voxels by the definition: inside, and some face neighbour is
/// outside the mask or outside the volume.
pub fn brute_surface(m: &Mask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = m.size();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !m.get(x, y, z) {
                    continue;
                }
                let p = [x as isize, y as isize, z as isize];
                let outside = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]].iter().any(|d| {
                    let q = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
                    q.iter().zip([nx, ny, nz]).any(|(&c, n)| c < 0 || c >= n as isize)
                        || !m.get(q[0] as usize, q[1] as usize, q[2] as usize)
                });
                if outside {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// Exhaustive nearest-surface search: `(assd, mssd, rmsd)`.
pub fn brute_surface_distances(a: &Mask, b: &Mask) -> (f64, f64, f64) {
    let s = a.spacing();
    let (sa, sb) = (brute_surface(a), brute_surface(b));
    let dist = |p: &[usize; 3], q: &[usize; 3]| {
        ((0..3).map(|i| ((p[i] as f64 - q[i] as f64) * s[i]).powi(2)).sum::<f64>()).sqrt()
    };
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| -> Vec<f64> {
        from.iter().map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)).collect()
    };
    let mut all = directed(&sa, &sb);
    all.extend(directed(&sb, &sa));
    let n = all.len() as f64;
    (
        all.iter().sum::<f64>() / n,
        all.iter().copied().fold(0.0, f64::max),
        (all.iter().map(|d| d * d).sum::<f64>() / n).sqrt(),
    )
}

pub fn random_mask<R: Rng>(size: [usize; 3], spacing: [f64; 3], density: f64, rng: &mut R) -> Mask {
    Mask::from_fn(size, spacing, |_, _, _| rng.random_bool(density)).unwrap()
}
