//! Slow, direct reference implementations used to verify the fast paths.
//!
//! Nothing here calls the separable blur, the mask rasterizer or the
//! analytic gradient; each routine recomputes its quantity from the
//! definition (direct 2-D convolution, per-cell rectangle tests, central
//! differences, closed-form recursions).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptation::LossWeights;
use crate::field::{GaussianKernel, Grid, Shape};
use crate::mask::{LatentMask, Layout};

/// Denominator floor for relative gradient errors.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Uniform `[-1, 1)` entries from a seeded ChaCha8 stream.
pub fn random_grid(shape: Shape, seed: u64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0)).expect("valid shape")
}

fn clamp(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Direct `k×k` convolution with clamp-to-edge reads.
pub fn direct_blur(g: &Grid, k: &GaussianKernel) -> Grid {
    let r = k.radius() as isize;
    let (h, w) = (g.height(), g.width());
    Grid::from_fn(g.shape(), |c, y, x| {
        let mut acc = 0.0;
        for di in -r..=r {
            for dj in -r..=r {
                let yy = clamp(y as isize + di, h);
                let xx = clamp(x as isize + dj, w);
                acc += k.weight(di, dj) * g.get(c, yy, xx);
            }
        }
        acc
    })
    .expect("shape preserved")
}

/// Transpose of [`direct_blur`], by scattering each input onto its taps.
pub fn direct_blur_transpose(g: &Grid, k: &GaussianKernel) -> Grid {
    let r = k.radius() as isize;
    let (h, w) = (g.height(), g.width());
    let mut out = vec![0.0; g.data().len()];
    for c in 0..g.channels() {
        for y in 0..h {
            for x in 0..w {
                let v = g.get(c, y, x);
                for di in -r..=r {
                    for dj in -r..=r {
                        let yy = clamp(y as isize + di, h);
                        let xx = clamp(x as isize + dj, w);
                        out[(c * h + yy) * w + xx] += k.weight(di, dj) * v;
                    }
                }
            }
        }
    }
    Grid::from_vec(g.shape(), out).expect("shape preserved")
}

pub fn block_mean(img: &Grid, factor: usize) -> Grid {
    let shape = Shape::new(img.channels(), img.height() / factor, img.width() / factor);
    Grid::from_fn(shape, |c, y, x| {
        let mut acc = 0.0;
        for yy in y * factor..(y + 1) * factor {
            for xx in x * factor..(x + 1) * factor {
                acc += img.get(c, yy, xx);
            }
        }
        acc / (factor * factor) as f64
    })
    .expect("valid shape")
}

/// `‖M ⊙ (high(a) - high(b))‖² / (C·|M|)` by decomposing both inputs.
pub fn masked_high_loss(a: &Grid, b: &Grid, mask: &LatentMask, k: &GaussianKernel) -> f64 {
    let (la, lb) = (direct_blur(a, k), direct_blur(b, k));
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels() {
        for y in 0..a.height() {
            for x in 0..a.width() {
                if mask.get(y, x) {
                    let ha = a.get(c, y, x) - la.get(c, y, x);
                    let hb = b.get(c, y, x) - lb.get(c, y, x);
                    sum += (ha - hb).powi(2);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean over mask sites of the channel cosine between the blurred inputs.
pub fn cosine_loss(a: &Grid, b: &Grid, mask: &LatentMask, k: &GaussianKernel, eps: f64) -> f64 {
    let (la, lb) = (direct_blur(a, k), direct_blur(b, k));
    let mut sum = 0.0;
    let mut sites = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if !mask.get(y, x) {
                continue;
            }
            sites += 1;
            let va: Vec<f64> = (0..a.channels()).map(|c| la.get(c, y, x)).collect();
            let vb: Vec<f64> = (0..a.channels()).map(|c| lb.get(c, y, x)).collect();
            let na = va.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = vb.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na < eps || nb < eps {
                continue;
            }
            sum += va.iter().zip(&vb).map(|(p, q)| p * q).sum::<f64>() / (na * nb);
        }
    }
    if sites == 0 {
        0.0
    } else {
        sum / sites as f64
    }
}

pub fn total_loss(v_tar: &Grid, v_src: &Grid, fg: &LatentMask, k: &GaussianKernel, w: &LossWeights) -> f64 {
    let bg = fg.complement();
    w.obj * masked_high_loss(v_tar, v_src, fg, k)
        + w.div * cosine_loss(v_tar, v_src, &bg, k, 1e-12)
        + w.bg * masked_high_loss(v_tar, v_src, &bg, k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub coords: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Compare `analytic` against central differences of [`total_loss`] on
/// `n_coords` coordinates drawn with `seed`.
///
/// Relative error is `|a - f| / max(|a|, |f|, REL_ERROR_FLOOR)`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    v_tar: &Grid,
    v_src: &Grid,
    fg: &LatentMask,
    k: &GaussianKernel,
    w: &LossWeights,
    analytic: &Grid,
    n_coords: usize,
    h: f64,
    seed: u64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = v_tar.data().len();
    let mut report = GradCheckReport {
        coords: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    let base = v_tar.data().to_vec();
    for _ in 0..n_coords.min(n) {
        let i = rng.random_range(0..n);
        let probe = |delta: f64| {
            let mut d = base.clone();
            d[i] += delta;
            total_loss(&Grid::from_vec(v_tar.shape(), d).expect("finite"), v_src, fg, k, w)
        };
        let fd = (probe(h) - probe(-h)) / (2.0 * h);
        let a = analytic.data()[i];
        let abs = (a - fd).abs();
        let rel = abs / a.abs().max(fd.abs()).max(REL_ERROR_FLOOR);
        report.coords += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        report.max_rel_error = report.max_rel_error.max(rel);
    }
    report
}

/// Plain gradient descent on the full-mask foreground term alone.
pub fn reference_obj_descent(v: &Grid, s: &Grid, k: &GaussianKernel, weight: f64, step: f64, iters: usize) -> Grid {
    let count = v.data().len() as f64;
    let mut cur = v.clone();
    for _ in 0..iters {
        let d = cur.sub(s).unwrap();
        let hd = d.sub(&direct_blur(&d, k)).unwrap();
        let hthd = hd.sub(&direct_blur_transpose(&hd, k)).unwrap();
        cur.axpy(-step * 2.0 * weight / count, &hthd).unwrap();
    }
    cur
}

/// Per-cell rectangle-intersection rasterizer.
pub fn brute_force_mask(layout: &Layout, latent_h: usize, latent_w: usize) -> LatentMask {
    let sx = layout.image_width as f64 / latent_w as f64;
    let sy = layout.image_height as f64 / latent_h as f64;
    LatentMask::from_fn(latent_h, latent_w, |r, c| {
        let (xa, xb) = (c as f64 * sx, (c + 1) as f64 * sx);
        let (ya, yb) = (r as f64 * sy, (r + 1) as f64 * sy);
        layout.boxes.iter().any(|b| {
            let w = b.x2.min(xb) - b.x1.max(xa);
            let h = b.y2.min(yb) - b.y1.max(ya);
            w > 0.0 && h > 0.0
        })
    })
}

/// Final FlowEdit latent on a point-mass backend, by iterating the
/// displacement recursion `D ← D·t_{i-1}/t_i` with
/// `D = z_flow - z0 - (μ_tar - μ_src)` from `i = n_max` down to 1.
pub fn point_mass_final(z0: &Grid, mu_src: &Grid, mu_tar: &Grid, times: &[f64], n_max: usize) -> Grid {
    let shift = mu_tar.sub(mu_src).unwrap();
    let mut d = shift.scale(-1.0);
    for i in (1..=n_max).rev() {
        d = d.scale(times[i - 1] / times[i]);
    }
    z0.add(&shift).unwrap().add(&d).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::make_gaussian_kernel;

    #[test]
    fn direct_transpose_is_adjoint() {
        let shape = Shape::new(2, 5, 7);
        let x = random_grid(shape, 1);
        let y = random_grid(shape, 2);
        let k = make_gaussian_kernel(5, 1.0).unwrap();
        let lhs = direct_blur(&x, &k).dot(&y).unwrap();
        let rhs = x.dot(&direct_blur_transpose(&y, &k)).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn recursion_hits_shift_at_zero() {
        let shape = Shape::new(1, 2, 2);
        let z0 = random_grid(shape, 3);
        let (ms, mt) = (random_grid(shape, 4), random_grid(shape, 5));
        let times: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let fin = point_mass_final(&z0, &ms, &mt, &times, 10);
        let expected = z0.add(&mt.sub(&ms).unwrap()).unwrap();
        assert!(fin.max_abs_diff(&expected).unwrap() < 1e-15);
    }
}
