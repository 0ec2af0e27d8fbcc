//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use gatnet::landmarks::LandmarkSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
}

pub fn values(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn tensor(data: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
}

/// `max |a - b| / max |b|`, with a floor on the denominator.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Gram matrix of a `(C, H, W)` map by explicit triple loop.
pub fn gram_loop(f: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let mut acc = 0.0;
            for p in 0..h * w {
                acc += f[i * h * w + p] * f[j * h * w + p];
            }
            g[i * c + j] = acc;
        }
    }
    g
}

pub fn mean_abs_loop(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

pub fn mse_loop(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Masked L1 of `(N, C, H, W)` images under an `(N, 1, H, W)` mask, per pixel.
pub fn masked_l1_loop(a: &[f64], b: &[f64], mask: &[f64], n: usize, c: usize, h: usize, w: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                let m = mask[(s * h + y) * w + x];
                if m == 0.0 {
                    continue;
                }
                den += m * c as f64;
                for ch in 0..c {
                    let i = ((s * c + ch) * h + y) * w + x;
                    num += (a[i] - b[i]).abs() * m;
                }
            }
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Central-difference gradient of `f` with respect to every entry of `x`.
pub fn numeric_grad(f: &dyn Fn(&Tensor) -> f64, x: &[f64], shape: &[usize], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        buf[i] = x[i] + eps;
        let plus = f(&tensor(buf.clone(), shape));
        buf[i] = x[i] - eps;
        let minus = f(&tensor(buf.clone(), shape));
        buf[i] = x[i];
        out.push((plus - minus) / (2.0 * eps));
    }
    out
}

/// Analytic gradient of `f` at `x` via backprop.
pub fn analytic_grad(f: &dyn Fn(&Tensor) -> Tensor, x: &[f64], shape: &[usize]) -> Vec<f64> {
    let v = Var::from_tensor(&tensor(x.to_vec(), shape)).unwrap();
    let loss = f(v.as_tensor());
    let grads = loss.backward().unwrap();
    values(grads.get(v.as_tensor()).expect("input receives a gradient"))
}

/// `‖a − n‖ / ‖n‖` over whole gradient vectors.
pub fn grad_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
    diff / norm
}

/// Largest singular value via an independent dense SVD.
pub fn sigma_max(data: &[f64], rows: usize, cols: usize) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(rows, cols, data);
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

fn in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let d = |u: [f64; 2], v: [f64; 2], w: [f64; 2]| (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0]);
    let (d1, d2, d3) = (d(a, b, p), d(b, c, p), d(c, a, p));
    let neg = d1 < -1e-9 || d2 < -1e-9 || d3 < -1e-9;
    let pos = d1 > 1e-9 || d2 > 1e-9 || d3 > 1e-9;
    !(neg && pos)
}

/// Pixels (integer coordinates) inside the convex hull of `points`.
///
/// By Carathéodory's theorem a plane point lies in the hull iff it lies in a
/// triangle spanned by three of the points, so this needs no hull construction.
pub fn hull_mask_oracle(points: &[[f32; 2]], size: usize) -> Vec<bool> {
    let pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0] as f64, p[1] as f64]).collect();
    let mut out = vec![false; size * size];
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let n = pts.len();
    for y in (y0.ceil().max(0.0) as usize)..=(y1.floor().min(size as f64 - 1.0) as usize) {
        for x in (x0.ceil().max(0.0) as usize)..=(x1.floor().min(size as f64 - 1.0) as usize) {
            let p = [x as f64, y as f64];
            'tri: for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        if in_triangle(p, pts[i], pts[j], pts[k]) {
                            out[y * size + x] = true;
                            break 'tri;
                        }
                    }
                }
            }
        }
    }
    out
}

/// A random but face-like 68-point set in a 256 frame: each component is
/// scattered inside its own box so hulls are non-degenerate.
pub fn random_landmarks(seed: u64) -> LandmarkSet {
    let mut r = rng(seed);
    let cx = r.random_range(100.0..156.0f32);
    let cy = r.random_range(110.0..150.0f32);
    let mut pts = vec![[0f32; 2]; 68];
    let mut scatter = |range: std::ops::Range<usize>, x: f32, y: f32, w: f32, h: f32, r: &mut ChaCha8Rng| {
        for p in &mut pts[range] {
            *p = [x + r.random_range(-w..w), y + r.random_range(-h..h)];
        }
    };
    scatter(0..17, cx, cy + 20.0, 60.0, 30.0, &mut r);
    scatter(17..27, cx, cy - 40.0, 40.0, 6.0, &mut r);
    scatter(27..36, cx, cy, 8.0, 15.0, &mut r);
    scatter(36..42, cx - 25.0, cy - 20.0, 10.0, 5.0, &mut r);
    scatter(42..48, cx + 25.0, cy - 20.0, 10.0, 5.0, &mut r);
    scatter(48..68, cx, cy + 30.0, 20.0, 8.0, &mut r);
    LandmarkSet::new(pts, format!("fixture{seed}")).unwrap()
}
