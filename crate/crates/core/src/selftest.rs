//! Oracle suites run by the `selftest` and `gradcheck` commands.
//!
//! Each suite draws seeded random cases, compares the fast path with a
//! reference from [`crate::oracle`] and reports the worst discrepancy.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptation::{adapt_velocity, grad_total, AdaptConfig, LearnableVelocity, LossWeights};
use crate::backend::{AnalyticCodec, ChannelMap, LinearBackend, LinearField, PointMassBackend, PromptPair};
use crate::editor::{run, run_flowedit, EditConfig, EditMode, Silent};
use crate::error::Result;
use crate::field::{blur, decompose, make_gaussian_kernel, GaussianKernel, Grid, Shape};
use crate::mask::{rasterize_mask, LatentMask, Layout, ObjectBox};
use crate::oracle;
use crate::schedule::derive_seed;

pub const DECOMPOSE_TOL: f64 = 1e-12;
pub const BLUR_TOL: f64 = 1e-10;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_H: f64 = 1e-5;
pub const CLOSED_FORM_TOL: f64 = 1e-9;
pub const EQUIVALENCE_TOL: f64 = 1e-12;

const KERNEL_SIZES: [usize; 4] = [1, 3, 5, 7];

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest error seen (or violation count for ordinal suites).
    pub worst: f64,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, error: f64, tol: f64) {
        self.cases += 1;
        self.worst = self.worst.max(error);
        if error.is_nan() || error > tol {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<22} {}/{} passed (worst {:.3e})",
            self.name,
            self.cases - self.failures,
            self.cases,
            self.worst
        )
    }
}

fn random_shape(rng: &mut impl Rng, max_c: usize, max_h: usize, max_w: usize) -> Shape {
    Shape::new(
        rng.random_range(1..=max_c),
        rng.random_range(1..=max_h),
        rng.random_range(1..=max_w),
    )
}

fn random_kernel(rng: &mut impl Rng) -> GaussianKernel {
    let size = KERNEL_SIZES[rng.random_range(0..KERNEL_SIZES.len())];
    make_gaussian_kernel(size, rng.random_range(0.5..2.0)).expect("valid kernel")
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> LatentMask {
    let p: f64 = rng.random_range(0.0..1.0);
    LatentMask::from_fn(h, w, |_, _| rng.random_bool(p))
}

/// One adaptation problem.
#[derive(Clone, Debug)]
pub struct AdaptInstance {
    pub v_tar: Grid,
    pub v_src: Grid,
    pub mask: LatentMask,
    pub kernel: GaussianKernel,
    pub weights: LossWeights,
}

/// Shapes up to `4×16×32` with at least two channels, random masks,
/// kernels of size 1 to 7 and weights in `[0, 5]`.
///
/// Single-channel cosines are sign functions with no useful gradient, so
/// the generator starts at two channels.
pub fn random_instance(seed: u64) -> AdaptInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(
        rng.random_range(2..=4),
        rng.random_range(2..=16),
        rng.random_range(2..=32),
    );
    let kernel = random_kernel(&mut rng);
    let mask = random_mask(&mut rng, shape.height, shape.width);
    let weights = LossWeights {
        obj: rng.random_range(0.0..=5.0),
        div: rng.random_range(0.0..=5.0),
        bg: rng.random_range(0.0..=5.0),
    };
    AdaptInstance {
        v_tar: oracle::random_grid(shape, derive_seed(seed, 1)),
        v_src: oracle::random_grid(shape, derive_seed(seed, 2)),
        mask,
        kernel,
        weights,
    }
}

/// Boxes with arbitrary or cell-aligned corners inside a random image.
pub fn random_layout(rng: &mut impl Rng) -> (Layout, usize, usize) {
    let latent_h = rng.random_range(1..=24);
    let latent_w = rng.random_range(1..=48);
    let image_h = rng.random_range(1..=200);
    let image_w = rng.random_range(1..=400);
    let mut layout = Layout::empty(image_w, image_h);
    let aligned = rng.random_bool(0.5);
    let (sx, sy) = (image_w as f64 / latent_w as f64, image_h as f64 / latent_h as f64);
    let coord = |rng: &mut ChaCha8Rng, extent: usize, cells: usize, scale: f64| {
        if aligned {
            rng.random_range(0..=cells) as f64 * scale
        } else {
            rng.random_range(0.0..=extent as f64)
        }
        .min(extent as f64)
    };
    let mut box_rng = ChaCha8Rng::seed_from_u64(rng.random());
    for i in 0..rng.random_range(0..6) {
        let (a, b) = (
            coord(&mut box_rng, image_w, latent_w, sx),
            coord(&mut box_rng, image_w, latent_w, sx),
        );
        let (c, d) = (
            coord(&mut box_rng, image_h, latent_h, sy),
            coord(&mut box_rng, image_h, latent_h, sy),
        );
        if a == b || c == d {
            continue;
        }
        layout.boxes.push(ObjectBox::new(
            format!("obj{i}"),
            a.min(b),
            c.min(d),
            a.max(b),
            c.max(d),
        ));
    }
    (layout, latent_h, latent_w)
}

pub fn decomposition_suite(cases: usize, seed: u64, tol: f64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("decomposition");
    for i in 0..cases {
        let g = oracle::random_grid(random_shape(&mut rng, 4, 64, 64), derive_seed(seed, i as u64));
        let k = random_kernel(&mut rng);
        let split = decompose(&g, &k);
        let err = split
            .low
            .add(&split.high)
            .and_then(|s| s.max_abs_diff(&g))
            .unwrap_or(f64::INFINITY);
        report.record(err, tol);
    }
    report
}

pub fn blur_suite(cases: usize, seed: u64, tol: f64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("blur-oracle");
    for i in 0..cases {
        let g = oracle::random_grid(random_shape(&mut rng, 4, 32, 32), derive_seed(seed, i as u64));
        let k = random_kernel(&mut rng);
        let err = blur(&g, &k)
            .max_abs_diff(&oracle::direct_blur(&g, &k))
            .unwrap_or(f64::INFINITY);
        report.record(err, tol);
    }
    report
}

pub fn gradcheck_suite(instances: usize, coords: usize, seed: u64, tol: f64) -> SuiteReport {
    let mut report = SuiteReport::new("gradcheck");
    for i in 0..instances {
        let inst = random_instance(derive_seed(seed, i as u64));
        let analytic = grad_total(
            &LearnableVelocity::new(inst.v_tar.clone()),
            &inst.v_src,
            &inst.mask,
            &inst.kernel,
            &inst.weights,
        );
        let err = match analytic {
            Ok(g) => {
                oracle::gradient_check(
                    &inst.v_tar,
                    &inst.v_src,
                    &inst.mask,
                    &inst.kernel,
                    &inst.weights,
                    &g,
                    coords,
                    GRADCHECK_H,
                    derive_seed(seed, !(i as u64)),
                )
                .max_rel_error
            }
            Err(_) => f64::INFINITY,
        };
        report.record(err, tol);
    }
    report
}

fn point_mass(shape: Shape, seed: u64, prompts: &PromptPair) -> (PointMassBackend, Grid, Grid) {
    let mu_src = oracle::random_grid(shape, derive_seed(seed, 10));
    let mu_tar = oracle::random_grid(shape, derive_seed(seed, 11));
    let backend = PointMassBackend::new(AnalyticCodec::default())
        .with_mean(prompts.source.clone(), mu_src.clone())
        .with_mean(prompts.target.clone(), mu_tar.clone());
    (backend, mu_src, mu_tar)
}

fn prompts() -> PromptPair {
    PromptPair::new("An urban scene on a sunny day", "An urban scene on a snowy day").expect("non-empty")
}

/// Point-mass FlowEdit with `N_max = T` lands on `z0 + μ_tar - μ_src`.
pub fn closed_form_suite(steps: &[usize], seeds: u64, tol: f64) -> SuiteReport {
    let mut report = SuiteReport::new("flowedit-closed-form");
    let prompts = prompts();
    for &t in steps {
        for seed in 0..seeds {
            let shape = Shape::new(4, 6, 10);
            let z0 = oracle::random_grid(shape, derive_seed(seed, 1));
            let (mut backend, ms, mt) = point_mass(shape, seed, &prompts);
            let cfg = EditConfig {
                steps: t,
                n_max: t,
                seed,
                mode: EditMode::Flowedit,
                ..EditConfig::default()
            };
            let expected = z0.add(&mt.sub(&ms).expect("same shape")).expect("same shape");
            let err = run_flowedit(&z0, &mut backend, &prompts, &cfg)
                .and_then(|out| out.latent.max_abs_diff(&expected))
                .unwrap_or(f64::INFINITY);
            report.record(err, tol);
        }
    }
    report
}

/// A latent-dependent linear backend with a full channel-mixing matrix.
pub fn mixing_linear_backend(shape: Shape, seed: u64, prompts: &PromptPair) -> Result<LinearBackend> {
    let c = shape.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = |index: u64| LinearField {
        map: ChannelMap::Matrix((0..c * c).map(|_| rng.random_range(-0.5..0.5)).collect()),
        bias: oracle::random_grid(shape, derive_seed(seed, index)),
    };
    let (fs, ft) = (field(20), field(21));
    LinearBackend::new(AnalyticCodec::default())
        .with_field(prompts.source.clone(), fs)?
        .with_field(prompts.target.clone(), ft)
}

fn layout_for(shape: Shape, seed: u64) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (shape.width * 8, shape.height * 8);
    let mut layout = Layout::empty(w, h);
    let x1 = rng.random_range(0.0..w as f64 / 2.0);
    let y1 = rng.random_range(0.0..h as f64 / 2.0);
    layout
        .boxes
        .push(ObjectBox::new("Car", x1, y1, x1 + w as f64 / 3.0, y1 + h as f64 / 3.0));
    layout
}

/// Adaptation with `N_n = 0` and zero weights reproduces plain FlowEdit.
pub fn equivalence_suite(seeds: u64, tol: f64) -> SuiteReport {
    let mut report = SuiteReport::new("degenerate-equivalence");
    let prompts = prompts();
    let shape = Shape::new(4, 8, 12);
    for seed in 0..seeds {
        let z0 = oracle::random_grid(shape, derive_seed(seed, 1));
        let base = EditConfig {
            seed,
            mode: EditMode::Flowedit,
            weights: LossWeights::ZERO,
            adapt: AdaptConfig {
                n_inner: 0,
                ..AdaptConfig::default()
            },
            ..EditConfig::default()
        };
        let drive = EditConfig {
            mode: EditMode::Driveflow,
            ..base.clone()
        };
        let layout = layout_for(shape, seed);
        let err = (|| {
            let a = run(
                &z0,
                &layout,
                &mut mixing_linear_backend(shape, seed, &prompts)?,
                &prompts,
                &base,
                &mut Silent,
            )?;
            let b = run(
                &z0,
                &layout,
                &mut mixing_linear_backend(shape, seed, &prompts)?,
                &prompts,
                &drive,
                &mut Silent,
            )?;
            a.latent.max_abs_diff(&b.latent)
        })()
        .unwrap_or(f64::INFINITY);
        report.record(err, tol);
    }
    report
}

/// Logged totals never increase under Armijo line search.
pub fn monotonicity_suite(instances: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("monotonicity");
    let cfg = AdaptConfig::default();
    for i in 0..instances {
        let inst = random_instance(derive_seed(seed, i as u64));
        let violations = match adapt_velocity(&inst.v_tar, &inst.v_src, &inst.mask, &inst.kernel, &inst.weights, &cfg) {
            Ok(out) => out.losses.windows(2).filter(|w| w[1].total > w[0].total).count() as f64,
            Err(_) => f64::INFINITY,
        };
        report.record(violations, 0.0);
    }
    report
}

/// With a latent-independent field the seed cannot change the result.
pub fn noise_free_suite(seeds: u64, tol: f64) -> SuiteReport {
    let mut report = SuiteReport::new("noise-free");
    let prompts = prompts();
    let shape = Shape::new(4, 8, 12);
    let z0 = oracle::random_grid(shape, 5);
    let layout = layout_for(shape, 5);
    let backend = || -> Result<LinearBackend> {
        LinearBackend::new(AnalyticCodec::default())
            .with_field(
                prompts.source.clone(),
                LinearField::constant(oracle::random_grid(shape, 6)),
            )?
            .with_field(
                prompts.target.clone(),
                LinearField::constant(oracle::random_grid(shape, 7)),
            )
    };
    let edit = |seed: u64| -> Result<Grid> {
        let cfg = EditConfig {
            seed,
            ..EditConfig::default()
        };
        Ok(run(&z0, &layout, &mut backend()?, &prompts, &cfg, &mut Silent)?.latent)
    };
    let reference = edit(0);
    for seed in 1..=seeds {
        let err = match (&reference, edit(seed)) {
            (Ok(a), Ok(b)) => a.max_abs_diff(&b).unwrap_or(f64::INFINITY),
            _ => f64::INFINITY,
        };
        report.record(err, tol);
    }
    report
}

pub fn mask_suite(layouts: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("mask-oracle");
    for _ in 0..layouts {
        let (layout, h, w) = random_layout(&mut rng);
        let mismatches = match rasterize_mask(&layout, h, w) {
            Ok(m) => {
                let oracle = oracle::brute_force_mask(&layout, h, w);
                m.bits().iter().zip(oracle.bits()).filter(|(a, b)| a != b).count() as f64
            }
            Err(_) => f64::INFINITY,
        };
        report.record(mismatches, 0.0);
    }
    report
}

/// The quick suite behind `selftest`.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        decomposition_suite(20, seed, DECOMPOSE_TOL),
        blur_suite(20, seed, BLUR_TOL),
        gradcheck_suite(20, 20, seed, GRADCHECK_TOL),
        closed_form_suite(&[1, 10, 50], 3, CLOSED_FORM_TOL),
        equivalence_suite(2, EQUIVALENCE_TOL),
        monotonicity_suite(10, seed),
        noise_free_suite(3, EQUIVALENCE_TOL),
        mask_suite(50, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        for r in run_all(0) {
            assert!(r.passed(), "{r}");
            assert!(r.cases > 0);
        }
    }

    #[test]
    fn instances_are_reproducible() {
        let (a, b) = (random_instance(3), random_instance(3));
        assert_eq!(a.v_tar, b.v_tar);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.weights, b.weights);
        assert!(a.v_tar.channels() >= 2);
    }

    #[test]
    fn layouts_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (layout, _, _) = random_layout(&mut rng);
            layout.validate().unwrap();
        }
    }

    #[test]
    fn failures_are_counted() {
        let mut r = SuiteReport::new("x");
        r.record(1.0, 0.5);
        r.record(0.1, 0.5);
        r.record(f64::NAN, 0.5);
        assert_eq!((r.cases, r.failures), (3, 2));
        assert!(!r.passed());
    }
}
