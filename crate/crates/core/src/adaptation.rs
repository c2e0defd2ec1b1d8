//! Inner-loop adaptation of the target velocity.
//!
//! The target velocity is treated as a free variable and refined by gradient
//! descent on
//!
//! ```text
//! total = λ1·L_obj + λ2·L_div + λ3·L_bg
//! L_obj = ‖M ⊙ (H v - H s)‖² / |M|
//! L_div = mean over background sites of cos(B v, B s)   (cosine across channels)
//! L_bg  = ‖M̄ ⊙ (H v - H s)‖² / |M̄|
//! ```
//!
//! where `B` is the Gaussian blur, `H = I - B`, `s` the source velocity, `M`
//! the foreground mask broadcast over channels and `M̄` its complement.
//! `|M|` counts mask ones times channels; the cosine mean divides by the
//! number of background sites. Gradients go through the exact transposes
//! `Bᵀ` and `Hᵀ` of the replicate-padded blur.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{blur, blur_transpose, high_pass, high_pass_transpose, GaussianKernel, Grid};
use crate::mask::LatentMask;

/// Armijo contraction factor.
pub const ARMIJO_CONTRACTION: f64 = 0.5;
/// Armijo sufficient-decrease constant.
pub const ARMIJO_DECREASE: f64 = 1e-4;
/// Backtracks before an iteration gives up and keeps its iterate.
pub const MAX_BACKTRACKS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Foreground high-frequency alignment.
    pub obj: f64,
    /// Background low-frequency cosine similarity.
    pub div: f64,
    /// Background high-frequency regularization.
    pub bg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            obj: 5.0,
            div: 1.0,
            bg: 1.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        obj: 0.0,
        div: 0.0,
        bg: 0.0,
    };

    pub fn new(obj: f64, div: f64, bg: f64) -> Result<Self> {
        let w = Self { obj, div, bg };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_obj", self.obj),
            ("lambda_div", self.div),
            ("lambda_bg", self.bg),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    /// Inner iterations per outer step.
    pub n_inner: usize,
    pub step_size: f64,
    /// Armijo backtracking; guarantees a non-increasing total loss.
    pub line_search: bool,
    /// Sites whose channel vector is shorter than this contribute no cosine.
    pub epsilon_cos: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            n_inner: 5,
            step_size: 0.1,
            line_search: true,
            epsilon_cos: 1e-12,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(Error::invalid(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.epsilon_cos.is_nan() || self.epsilon_cos < 0.0 {
            return Err(Error::invalid("epsilon_cos must be non-negative"));
        }
        Ok(())
    }
}

/// Loss values at the start of one inner iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "iter")]
    pub iteration: usize,
    pub l_obj: f64,
    pub l_div: f64,
    pub l_bg: f64,
    pub total: f64,
}

/// The target velocity as an optimization variable.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnableVelocity(Grid);

impl LearnableVelocity {
    pub fn new(init: Grid) -> Self {
        Self(init)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptOutcome {
    pub velocity: Grid,
    pub losses: Vec<LossBreakdown>,
}

pub fn total_loss(parts: (f64, f64, f64), w: &LossWeights) -> f64 {
    w.obj * parts.0 + w.div * parts.1 + w.bg * parts.2
}

fn check_mask(v: &Grid, mask: &LatentMask) -> Result<()> {
    if mask.height() != v.height() || mask.width() != v.width() {
        return Err(Error::invalid(format!(
            "mask {}x{} does not match velocity spatial size {}x{}",
            mask.height(),
            mask.width(),
            v.height(),
            v.width()
        )));
    }
    Ok(())
}

/// `Σ m ⊙ x²` with the mask broadcast across channels.
fn masked_sq_sum(x: &Grid, mask: &LatentMask) -> f64 {
    let bits = mask.bits();
    (0..x.channels())
        .map(|c| {
            x.channel(c)
                .iter()
                .zip(bits)
                .filter(|(_, &b)| b != 0)
                .map(|(v, _)| v * v)
                .sum::<f64>()
        })
        .sum()
}

fn masked_high_loss(high_diff: &Grid, mask: &LatentMask) -> f64 {
    let count = mask.count_ones() * high_diff.channels();
    if count == 0 {
        return 0.0;
    }
    masked_sq_sum(high_diff, mask) / count as f64
}

// Per-site cosine over the channel dimension. Calls `f(site, cos, |a|, |b|)`
// on every unguarded site that `mask` selects.
fn for_each_cosine(
    low_tar: &Grid,
    low_src: &Grid,
    mask: &LatentMask,
    eps: f64,
    mut f: impl FnMut(usize, f64, f64, f64),
) {
    let plane = low_tar.shape().plane();
    let channels = low_tar.channels();
    let (a, b) = (low_tar.data(), low_src.data());
    for (site, &bit) in mask.bits().iter().enumerate() {
        if bit == 0 {
            continue;
        }
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for c in 0..channels {
            let (x, y) = (a[c * plane + site], b[c * plane + site]);
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        let (na, nb) = (aa.sqrt(), bb.sqrt());
        if na < eps || nb < eps {
            continue;
        }
        f(site, ab / (na * nb), na, nb);
    }
}

fn cosine_mean(low_tar: &Grid, low_src: &Grid, bg_mask: &LatentMask, eps: f64) -> f64 {
    let sites = bg_mask.count_ones();
    if sites == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for_each_cosine(low_tar, low_src, bg_mask, eps, |_, cos, _, _| acc += cos);
    acc / sites as f64
}

/// Foreground high-frequency alignment loss; 0 for an empty mask.
pub fn loss_obj(v_tar: &Grid, v_src: &Grid, mask: &LatentMask, kernel: &GaussianKernel) -> Result<f64> {
    check_mask(v_tar, mask)?;
    let diff = v_tar.sub(v_src)?;
    Ok(masked_high_loss(&high_pass(&diff, kernel), mask))
}

/// Mean background cosine similarity of the low-frequency parts, with the
/// default zero-vector guard.
pub fn loss_div(v_tar: &Grid, v_src: &Grid, bg_mask: &LatentMask, kernel: &GaussianKernel) -> Result<f64> {
    loss_div_with_eps(v_tar, v_src, bg_mask, kernel, AdaptConfig::default().epsilon_cos)
}

pub fn loss_div_with_eps(
    v_tar: &Grid,
    v_src: &Grid,
    bg_mask: &LatentMask,
    kernel: &GaussianKernel,
    eps: f64,
) -> Result<f64> {
    v_tar.ensure_same_shape(v_src)?;
    check_mask(v_tar, bg_mask)?;
    Ok(cosine_mean(&blur(v_tar, kernel), &blur(v_src, kernel), bg_mask, eps))
}

/// Background high-frequency regularization; 0 for an empty mask.
pub fn loss_bg(v_tar: &Grid, v_src: &Grid, bg_mask: &LatentMask, kernel: &GaussianKernel) -> Result<f64> {
    loss_obj(v_tar, v_src, bg_mask, kernel)
}

/// Everything about one inner-loop problem that does not depend on the
/// current target velocity.
pub struct AdaptProblem<'a> {
    v_src: &'a Grid,
    low_src: Grid,
    fg: LatentMask,
    bg: LatentMask,
    kernel: &'a GaussianKernel,
    weights: LossWeights,
    eps: f64,
}

/// Loss terms plus the intermediates the gradient reuses.
pub struct Evaluation {
    pub l_obj: f64,
    pub l_div: f64,
    pub l_bg: f64,
    pub total: f64,
    high_diff: Grid,
    low_tar: Grid,
}

impl Evaluation {
    pub fn breakdown(&self, iteration: usize) -> LossBreakdown {
        LossBreakdown {
            iteration,
            l_obj: self.l_obj,
            l_div: self.l_div,
            l_bg: self.l_bg,
            total: self.total,
        }
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("l_obj", self.l_obj),
            ("l_div", self.l_div),
            ("l_bg", self.l_bg),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

impl<'a> AdaptProblem<'a> {
    pub fn new(
        v_src: &'a Grid,
        fg_mask: &LatentMask,
        kernel: &'a GaussianKernel,
        weights: LossWeights,
        epsilon_cos: f64,
    ) -> Result<Self> {
        check_mask(v_src, fg_mask)?;
        weights.validate()?;
        Ok(Self {
            v_src,
            low_src: blur(v_src, kernel),
            fg: fg_mask.clone(),
            bg: fg_mask.complement(),
            kernel,
            weights,
            eps: epsilon_cos,
        })
    }

    pub fn evaluate(&self, v_tar: &Grid) -> Result<Evaluation> {
        let high_diff = high_pass(&v_tar.sub(self.v_src)?, self.kernel);
        let low_tar = blur(v_tar, self.kernel);
        let l_obj = masked_high_loss(&high_diff, &self.fg);
        let l_bg = masked_high_loss(&high_diff, &self.bg);
        let l_div = cosine_mean(&low_tar, &self.low_src, &self.bg, self.eps);
        Ok(Evaluation {
            l_obj,
            l_div,
            l_bg,
            total: total_loss((l_obj, l_div, l_bg), &self.weights),
            high_diff,
            low_tar,
        })
    }

    /// Gradient of the total loss at the point `eval` was computed for.
    pub fn gradient(&self, eval: &Evaluation) -> Grid {
        let shape = eval.high_diff.shape();
        let plane = shape.plane();
        let channels = shape.channels;
        let w = &self.weights;

        // quadratic terms: Hᵀ (c_fg·M + c_bg·M̄) ⊙ H(v - s)
        let fg_count = self.fg.count_ones() * channels;
        let bg_count = self.bg.count_ones() * channels;
        let c_fg = if fg_count > 0 {
            2.0 * w.obj / fg_count as f64
        } else {
            0.0
        };
        let c_bg = if bg_count > 0 {
            2.0 * w.bg / bg_count as f64
        } else {
            0.0
        };
        let mut grad = Grid::zeros(shape).expect("shape already validated");
        if c_fg != 0.0 || c_bg != 0.0 {
            let bits = self.fg.bits();
            let hd = eval.high_diff.data();
            let weighted: Vec<f64> = (0..channels * plane)
                .map(|i| hd[i] * if bits[i % plane] != 0 { c_fg } else { c_bg })
                .collect();
            grad = high_pass_transpose(&Grid::from_parts_unchecked(shape, weighted), self.kernel);
        }

        // cosine term: Bᵀ of the per-site gradient w.r.t. the blurred target
        let bg_sites = self.bg.count_ones();
        if w.div != 0.0 && bg_sites > 0 {
            let scale = w.div / bg_sites as f64;
            let mut g_low = vec![0.0; channels * plane];
            let (a, b) = (eval.low_tar.data(), self.low_src.data());
            for_each_cosine(&eval.low_tar, &self.low_src, &self.bg, self.eps, |site, cos, na, nb| {
                let inv_ab = 1.0 / (na * nb);
                let inv_aa = cos / (na * na);
                for c in 0..channels {
                    let i = c * plane + site;
                    g_low[i] = scale * (b[i] * inv_ab - a[i] * inv_aa);
                }
            });
            let g = blur_transpose(&Grid::from_parts_unchecked(shape, g_low), self.kernel);
            grad.axpy(1.0, &g).expect("same shape");
        }
        grad
    }
}

/// Exact gradient of the weighted total loss with respect to the target
/// velocity. `fg_mask` is the foreground; the background is its complement.
pub fn grad_total(
    v_tar: &LearnableVelocity,
    v_src: &Grid,
    fg_mask: &LatentMask,
    kernel: &GaussianKernel,
    weights: &LossWeights,
) -> Result<Grid> {
    let problem = AdaptProblem::new(v_src, fg_mask, kernel, *weights, AdaptConfig::default().epsilon_cos)?;
    let eval = problem.evaluate(v_tar.grid())?;
    Ok(problem.gradient(&eval))
}

/// Run `cfg.n_inner` gradient steps from `v_tar_init`.
///
/// Each logged breakdown holds the losses at the start of its iteration.
/// With line search on, a step is accepted only under the Armijo condition,
/// and an iteration that exhausts its backtracks keeps the current iterate, so
/// the logged totals never increase.
pub fn adapt_velocity(
    v_tar_init: &Grid,
    v_src: &Grid,
    fg_mask: &LatentMask,
    kernel: &GaussianKernel,
    weights: &LossWeights,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    v_tar_init.ensure_same_shape(v_src)?;
    cfg.validate()?;
    if cfg.n_inner == 0 {
        return Ok(AdaptOutcome {
            velocity: v_tar_init.clone(),
            losses: Vec::new(),
        });
    }
    let problem = AdaptProblem::new(v_src, fg_mask, kernel, *weights, cfg.epsilon_cos)?;
    let mut v = LearnableVelocity::new(v_tar_init.clone());
    let mut eval = checked(problem.evaluate(v.grid())?)?;
    let mut losses = Vec::with_capacity(cfg.n_inner);

    for n in 0..cfg.n_inner {
        losses.push(eval.breakdown(n));
        let grad = problem.gradient(&eval);
        if !grad.is_finite() {
            return Err(Error::Numeric {
                term: "gradient",
                detail: format!("non-finite gradient at inner iteration {n}"),
            });
        }
        if !cfg.line_search {
            let mut next = v.grid().clone();
            next.axpy(-cfg.step_size, &grad)?;
            eval = checked(problem.evaluate(&next)?)?;
            v = LearnableVelocity::new(next);
            continue;
        }
        let grad_sq = grad.norm_sq();
        if grad_sq == 0.0 {
            continue;
        }
        let mut alpha = cfg.step_size;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand = v.grid().clone();
            cand.axpy(-alpha, &grad)?;
            let ce = problem.evaluate(&cand)?;
            if ce.total <= eval.total - ARMIJO_DECREASE * alpha * grad_sq {
                eval = checked(ce)?;
                v = LearnableVelocity::new(cand);
                break;
            }
            alpha *= ARMIJO_CONTRACTION;
        }
    }
    Ok(AdaptOutcome {
        velocity: v.into_grid(),
        losses,
    })
}

fn checked(eval: Evaluation) -> Result<Evaluation> {
    match eval.first_non_finite() {
        Some(term) => Err(Error::Numeric {
            term,
            detail: "loss evaluated to a non-finite value".into(),
        }),
        None => Ok(eval),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_gaussian_kernel, Shape};
    use crate::oracle;

    fn kernel() -> GaussianKernel {
        make_gaussian_kernel(5, 1.0).unwrap()
    }

    fn half_mask(h: usize, w: usize) -> LatentMask {
        LatentMask::from_fn(h, w, |_, c| c < w / 2)
    }

    #[test]
    fn equal_fields_have_zero_quadratic_losses() {
        let v = oracle::random_grid(Shape::new(3, 8, 8), 1);
        let m = half_mask(8, 8);
        assert_eq!(loss_obj(&v, &v, &m, &kernel()).unwrap(), 0.0);
        assert_eq!(loss_bg(&v, &v, &m, &kernel()).unwrap(), 0.0);
    }

    #[test]
    fn empty_masks_give_zero() {
        let a = oracle::random_grid(Shape::new(3, 8, 8), 1);
        let b = oracle::random_grid(Shape::new(3, 8, 8), 2);
        let z = LatentMask::zeros(8, 8);
        assert_eq!(loss_obj(&a, &b, &z, &kernel()).unwrap(), 0.0);
        assert_eq!(loss_bg(&a, &b, &z, &kernel()).unwrap(), 0.0);
        assert_eq!(loss_div(&a, &b, &z, &kernel()).unwrap(), 0.0);
    }

    #[test]
    fn obj_matches_straight_line_oracle() {
        let shape = Shape::new(2, 8, 8);
        let a = oracle::random_grid(shape, 3);
        let b = oracle::random_grid(shape, 4);
        let m = half_mask(8, 8);
        let k = kernel();
        let fast = loss_obj(&a, &b, &m, &k).unwrap();
        let slow = oracle::masked_high_loss(&a, &b, &m, &k);
        assert!((fast - slow).abs() <= 1e-10, "{fast} vs {slow}");
    }

    #[test]
    fn bg_with_full_mask_equals_obj_with_full_mask() {
        let shape = Shape::new(2, 8, 8);
        let a = oracle::random_grid(shape, 5);
        let b = oracle::random_grid(shape, 6);
        let full = LatentMask::ones(8, 8);
        assert_eq!(
            loss_bg(&a, &b, &full, &kernel()).unwrap(),
            loss_obj(&a, &b, &full, &kernel()).unwrap()
        );
    }

    #[test]
    fn cosine_special_cases() {
        let shape = Shape::new(2, 6, 6);
        let k = kernel();
        let full = LatentMask::ones(6, 6);
        // positive offset keeps every blurred channel vector away from zero
        let v = oracle::random_grid(shape, 7).map(|x| x + 3.0);
        assert!((loss_div(&v, &v, &full, &k).unwrap() - 1.0).abs() < 1e-12);
        assert!((loss_div(&v.scale(-1.0), &v, &full, &k).unwrap() + 1.0).abs() < 1e-12);
        // (a, b) against (-b, a) at every site
        let rot = Grid::from_fn(shape, |c, y, x| if c == 0 { -v.get(1, y, x) } else { v.get(0, y, x) }).unwrap();
        assert!(loss_div(&v, &rot, &full, &k).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_vectors_are_guarded() {
        let shape = Shape::new(2, 4, 4);
        let z = Grid::zeros(shape).unwrap();
        let v = Grid::filled(shape, 1.0).unwrap();
        let full = LatentMask::ones(4, 4);
        assert_eq!(loss_div(&z, &v, &full, &kernel()).unwrap(), 0.0);
        let g = grad_total(
            &LearnableVelocity::new(z),
            &v,
            &LatentMask::zeros(4, 4),
            &kernel(),
            &LossWeights::new(0.0, 1.0, 0.0).unwrap(),
        )
        .unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss((1.0, 1.0, 1.0), &LossWeights::default()), 7.0);
        assert_eq!(total_loss((3.0, -2.0, 9.0), &LossWeights::ZERO), 0.0);
        assert_eq!(
            total_loss(
                (0.5, -1.0, 0.25),
                &LossWeights {
                    obj: 2.0,
                    div: 3.0,
                    bg: 4.0
                }
            ),
            -1.0
        );
    }

    #[test]
    fn gradient_vanishes_at_quadratic_minimum() {
        let v = oracle::random_grid(Shape::new(3, 8, 8), 9);
        let w = LossWeights::new(5.0, 0.0, 1.0).unwrap();
        let g = grad_total(&LearnableVelocity::new(v.clone()), &v, &half_mask(8, 8), &kernel(), &w).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn cosine_gradient_is_radially_stationary_when_aligned() {
        let shape = Shape::new(3, 6, 6);
        let v = Grid::from_fn(shape, |c, _, _| [1.0, -2.0, 0.5][c]).unwrap();
        let w = LossWeights::new(0.0, 1.0, 0.0).unwrap();
        let g = grad_total(
            &LearnableVelocity::new(v.clone()),
            &v,
            &LatentMask::zeros(6, 6),
            &kernel(),
            &w,
        )
        .unwrap();
        assert!(g.dot(&v).unwrap().abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = Shape::new(2, 8, 8);
        let k = kernel();
        let w = LossWeights::new(1.5, 0.7, 2.0).unwrap();
        let v_tar = oracle::random_grid(shape, 21);
        let v_src = oracle::random_grid(shape, 22);
        let m = half_mask(8, 8);
        let g = grad_total(&LearnableVelocity::new(v_tar.clone()), &v_src, &m, &k, &w).unwrap();
        let report = oracle::gradient_check(&v_tar, &v_src, &m, &k, &w, &g, 50, 1e-5, 99);
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn doubling_obj_weight_doubles_its_contribution() {
        let shape = Shape::new(2, 8, 8);
        let k = kernel();
        let v_tar = oracle::random_grid(shape, 31);
        let v_src = oracle::random_grid(shape, 32);
        let m = half_mask(8, 8);
        let only = |obj| {
            grad_total(
                &LearnableVelocity::new(v_tar.clone()),
                &v_src,
                &m,
                &k,
                &LossWeights::new(obj, 0.0, 0.0).unwrap(),
            )
            .unwrap()
        };
        assert_eq!(only(2.0), only(1.0).scale(2.0));
    }

    #[test]
    fn zero_iterations_is_identity() {
        let shape = Shape::new(2, 8, 8);
        let v = oracle::random_grid(shape, 1);
        let s = oracle::random_grid(shape, 2);
        let cfg = AdaptConfig {
            n_inner: 0,
            ..AdaptConfig::default()
        };
        let out = adapt_velocity(&v, &s, &half_mask(8, 8), &kernel(), &LossWeights::default(), &cfg).unwrap();
        assert_eq!(out.velocity, v);
        assert!(out.losses.is_empty());
    }

    #[test]
    fn already_optimal_input_is_unchanged() {
        let v = oracle::random_grid(Shape::new(2, 8, 8), 1);
        let w = LossWeights::new(5.0, 0.0, 1.0).unwrap();
        let out = adapt_velocity(&v, &v, &half_mask(8, 8), &kernel(), &w, &AdaptConfig::default()).unwrap();
        assert_eq!(out.velocity, v);
        assert_eq!(out.losses.len(), 5);
    }

    #[test]
    fn line_search_never_increases_total() {
        let shape = Shape::new(3, 8, 12);
        let k = kernel();
        for seed in 0..10 {
            let v = oracle::random_grid(shape, 100 + seed);
            let s = oracle::random_grid(shape, 200 + seed);
            let m = half_mask(8, 12);
            let cfg = AdaptConfig {
                n_inner: 8,
                step_size: 10.0,
                ..AdaptConfig::default()
            };
            let out = adapt_velocity(&v, &s, &m, &k, &LossWeights::default(), &cfg).unwrap();
            for pair in out.losses.windows(2) {
                assert!(pair[1].total <= pair[0].total, "seed {seed}: {pair:?}");
            }
        }
    }

    #[test]
    fn obj_descent_tracks_reference_gradient_descent() {
        let shape = Shape::new(2, 8, 8);
        let k = kernel();
        let v = oracle::random_grid(shape, 41);
        let s = oracle::random_grid(shape, 42);
        let full = LatentMask::ones(8, 8);
        let w = LossWeights::new(1.0, 0.0, 0.0).unwrap();
        let cfg = AdaptConfig {
            n_inner: 40,
            step_size: 20.0,
            line_search: true,
            ..AdaptConfig::default()
        };
        let out = adapt_velocity(&v, &s, &full, &k, &w, &cfg).unwrap();
        let before = high_pass(&v.sub(&s).unwrap(), &k).norm();
        let after = high_pass(&out.velocity.sub(&s).unwrap(), &k).norm();
        assert!(after < before);
        for pair in out.losses.windows(2) {
            assert!(pair[1].l_obj <= pair[0].l_obj);
        }
        // a plain descent written against the direct-convolution oracle
        let reference = oracle::reference_obj_descent(&v, &s, &k, 1.0, 20.0, 40);
        assert!(out.velocity.max_abs_diff(&reference).unwrap() < 1e-9);
    }

    #[test]
    fn non_finite_inputs_are_reported() {
        let shape = Shape::new(2, 4, 4);
        let v = Grid::filled(shape, 1e200).unwrap();
        let s = Grid::filled(shape, -1e200).unwrap();
        let m = LatentMask::from_fn(4, 4, |r, _| r < 2);
        let err = adapt_velocity(&v, &s, &m, &kernel(), &LossWeights::default(), &AdaptConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }), "{err}");
    }
}
