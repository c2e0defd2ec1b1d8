//! Outer editing loops: plain noise-free FlowEdit and the adapted variant
//! that refines the target velocity at every step.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adaptation::{adapt_velocity, AdaptConfig, LossBreakdown, LossWeights};
use crate::backend::{Branch, PromptPair, VelocityBackend, VelocityQuery};
use crate::error::{Error, Result};
use crate::field::{GaussianKernel, Grid, KernelSpec};
use crate::mask::{rasterize_mask, LatentMask, Layout};
use crate::schedule::{build_time_grid, form_target_latent, sample_source_latent, EditState, NoiseSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    Flowedit,
    Driveflow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    /// Number of time intervals `T`.
    pub steps: usize,
    /// First editing step; editing starts at `t = n_max / steps`.
    pub n_max: usize,
    /// Noise pairings averaged per step.
    pub n_avg: usize,
    pub adapt: AdaptConfig,
    pub weights: LossWeights,
    pub kernel: KernelSpec,
    pub seed: u64,
    pub mode: EditMode,
    /// Foreground mask dilation in latent cells.
    pub mask_dilation: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            n_max: 33,
            n_avg: 1,
            adapt: AdaptConfig::default(),
            weights: LossWeights::default(),
            kernel: KernelSpec::default(),
            seed: 0,
            mode: EditMode::Driveflow,
            mask_dilation: 0,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        build_time_grid(self.steps, self.n_max)?;
        if self.n_avg == 0 {
            return Err(Error::invalid("n_avg must be at least 1"));
        }
        self.adapt.validate()?;
        self.weights.validate()?;
        self.kernel.build()?;
        Ok(())
    }
}

/// One outer step, as written to the JSONL log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub dv_norm: f64,
    pub losses: Vec<LossBreakdown>,
    pub micros: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditOutcome {
    pub latent: Grid,
    pub steps: Vec<StepRecord>,
}

/// Receives each step's record and the velocity difference it applied.
pub trait StepObserver {
    fn on_step(&mut self, record: &StepRecord, delta_v: &Grid);
}

impl<F: FnMut(&StepRecord, &Grid)> StepObserver for F {
    fn on_step(&mut self, record: &StepRecord, delta_v: &Grid) {
        self(record, delta_v)
    }
}

/// Observer that ignores every step.
pub struct Silent;

impl StepObserver for Silent {
    fn on_step(&mut self, _: &StepRecord, _: &Grid) {}
}

/// `v_tar - v_src`
pub fn velocity_difference(v_tar_adapted: &Grid, v_src_eval: &Grid) -> Result<Grid> {
    v_tar_adapted.sub(v_src_eval)
}

/// Backward Euler step `z_flow + (t_prev - t_cur)·delta_v`.
pub fn euler_update(z_flow: &Grid, delta_v: &Grid, t_prev: f64, t_cur: f64) -> Result<Grid> {
    if t_prev.partial_cmp(&t_cur) != Some(std::cmp::Ordering::Less) {
        return Err(Error::invalid(format!(
            "euler step needs t_prev < t_cur, got {t_prev} >= {t_cur}"
        )));
    }
    let dt = t_prev - t_cur;
    z_flow.zip_map(delta_v, |z, v| z + dt * v)
}

pub fn run_flowedit(
    z0_src: &Grid,
    backend: &mut dyn VelocityBackend,
    prompts: &PromptPair,
    cfg: &EditConfig,
) -> Result<EditOutcome> {
    if cfg.mode != EditMode::Flowedit {
        return Err(Error::invalid("run_flowedit requires mode = flowedit"));
    }
    run_edit(z0_src, None, backend, prompts, cfg, &mut Silent)
}

pub fn run_driveflow(
    z0_src: &Grid,
    layout: &Layout,
    backend: &mut dyn VelocityBackend,
    prompts: &PromptPair,
    cfg: &EditConfig,
) -> Result<EditOutcome> {
    if cfg.mode != EditMode::Driveflow {
        return Err(Error::invalid("run_driveflow requires mode = driveflow"));
    }
    let mask = foreground_mask(layout, z0_src, cfg)?;
    run_edit(z0_src, Some(&mask), backend, prompts, cfg, &mut Silent)
}

/// Rasterize `layout` at the latent's spatial size, applying the configured
/// dilation.
pub fn foreground_mask(layout: &Layout, latent: &Grid, cfg: &EditConfig) -> Result<LatentMask> {
    Ok(rasterize_mask(layout, latent.height(), latent.width())?.dilate(cfg.mask_dilation))
}

/// Shared driver. With `fg_mask = None` the target velocity is used as
/// evaluated; otherwise it is adapted against the source velocity first.
pub fn run_edit(
    z0_src: &Grid,
    fg_mask: Option<&LatentMask>,
    backend: &mut dyn VelocityBackend,
    prompts: &PromptPair,
    cfg: &EditConfig,
    observer: &mut dyn StepObserver,
) -> Result<EditOutcome> {
    cfg.validate()?;
    prompts.validate()?;
    let grid = build_time_grid(cfg.steps, cfg.n_max)?;
    let kernel: GaussianKernel = cfg.kernel.build()?;
    let mut noise = NoiseSource::new(cfg.seed);
    let mut state = EditState::new(z0_src.clone());
    let mut records = Vec::with_capacity(cfg.n_max);

    for i in grid.edit_steps() {
        let started = Instant::now();
        let (t_cur, t_prev) = (grid.t(i), grid.t(i - 1));
        let step = u32::try_from(i).map_err(|_| Error::invalid("step index exceeds u32"))?;
        let mut delta_v: Option<Grid> = None;
        let mut losses = Vec::new();

        for _ in 0..cfg.n_avg {
            let draw = noise.sample(z0_src.shape())?;
            let z_src = sample_source_latent(&state.z0_src, t_cur, &draw)?;
            let z_tar = form_target_latent(&state.z_flow, &z_src, &state.z0_src)?;
            let v_src = backend
                .velocity(&VelocityQuery {
                    latent: &z_src,
                    t: t_cur,
                    prompt: &prompts.source,
                    step,
                    branch: Branch::Source,
                })
                .map_err(|e| e.at_step(i))?;
            let mut v_tar = backend
                .velocity(&VelocityQuery {
                    latent: &z_tar,
                    t: t_cur,
                    prompt: &prompts.target,
                    step,
                    branch: Branch::Target,
                })
                .map_err(|e| e.at_step(i))?;
            if let Some(mask) = fg_mask {
                let adapted = adapt_velocity(&v_tar, &v_src, mask, &kernel, &cfg.weights, &cfg.adapt)
                    .map_err(|e| e.at_step(i))?;
                v_tar = adapted.velocity;
                losses.extend(adapted.losses);
            }
            let dv = velocity_difference(&v_tar, &v_src)?;
            match delta_v.as_mut() {
                Some(acc) => acc.axpy(1.0, &dv)?,
                None => delta_v = Some(dv),
            }
        }

        let mut delta_v = delta_v.expect("n_avg >= 1");
        if cfg.n_avg > 1 {
            delta_v = delta_v.scale(1.0 / cfg.n_avg as f64);
        }
        state.z_flow = euler_update(&state.z_flow, &delta_v, t_prev, t_cur)?;
        if !state.z_flow.is_finite() {
            return Err(Error::Numeric {
                term: "latent",
                detail: "edited latent became non-finite".into(),
            }
            .at_step(i));
        }
        let record = StepRecord {
            step: i,
            t: t_cur,
            dv_norm: delta_v.norm(),
            losses,
            micros: started.elapsed().as_micros() as u64,
        };
        observer.on_step(&record, &delta_v);
        records.push(record);
    }

    Ok(EditOutcome {
        latent: state.z_flow,
        steps: records,
    })
}

/// Dispatch on `cfg.mode`; flowedit ignores the layout.
pub fn run(
    z0_src: &Grid,
    layout: &Layout,
    backend: &mut dyn VelocityBackend,
    prompts: &PromptPair,
    cfg: &EditConfig,
    observer: &mut dyn StepObserver,
) -> Result<EditOutcome> {
    let mask = match cfg.mode {
        EditMode::Flowedit => None,
        EditMode::Driveflow => Some(foreground_mask(layout, z0_src, cfg)?),
    };
    run_edit(z0_src, mask.as_ref(), backend, prompts, cfg, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{AnalyticCodec, LinearBackend, LinearField, PointMassBackend};
    use crate::field::Shape;
    use crate::oracle;

    fn prompts() -> PromptPair {
        PromptPair::new("sunny", "snowy").unwrap()
    }

    fn point_mass(shape: Shape, seed: u64) -> (PointMassBackend, Grid, Grid) {
        let ms = oracle::random_grid(shape, seed);
        let mt = oracle::random_grid(shape, seed + 1);
        let b = PointMassBackend::new(AnalyticCodec::default())
            .with_mean("sunny", ms.clone())
            .with_mean("snowy", mt.clone());
        (b, ms, mt)
    }

    fn flowedit_cfg(steps: usize, n_max: usize, seed: u64) -> EditConfig {
        EditConfig {
            steps,
            n_max,
            seed,
            mode: EditMode::Flowedit,
            ..EditConfig::default()
        }
    }

    #[test]
    fn euler_arithmetic() {
        let shape = Shape::new(2, 2, 2);
        let z = oracle::random_grid(shape, 1);
        assert_eq!(euler_update(&z, &Grid::zeros(shape).unwrap(), 0.4, 0.5).unwrap(), z);
        let out = euler_update(
            &Grid::zeros(shape).unwrap(),
            &Grid::filled(shape, 1.0).unwrap(),
            0.48,
            0.5,
        )
        .unwrap();
        assert!(out.data().iter().all(|v| (v + 0.02).abs() < 1e-15));
        assert!(euler_update(&z, &z, 0.5, 0.5).is_err());
        assert!(euler_update(&z, &z, 0.6, 0.5).is_err());
    }

    #[test]
    fn equal_inputs_give_zero_difference() {
        let v = oracle::random_grid(Shape::new(2, 3, 3), 4);
        assert_eq!(velocity_difference(&v, &v).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn point_mass_difference_is_noise_free() {
        // ΔV = (z_flow - z0 - (μt - μs)) / t for any noise draw
        let shape = Shape::new(4, 3, 5);
        let (mut b, ms, mt) = point_mass(shape, 10);
        let z0 = oracle::random_grid(shape, 20);
        let z_flow = oracle::random_grid(shape, 21);
        let t = 0.36;
        let expected = z_flow
            .sub(&z0)
            .unwrap()
            .sub(&mt.sub(&ms).unwrap())
            .unwrap()
            .scale(1.0 / t);
        for seed in 0..3 {
            let n = NoiseSource::new(seed).sample(shape).unwrap();
            let zs = sample_source_latent(&z0, t, &n).unwrap();
            let zt = form_target_latent(&z_flow, &zs, &z0).unwrap();
            let q = |z, p, branch| VelocityQuery {
                latent: z,
                t,
                prompt: p,
                step: 1,
                branch,
            };
            let vs = b.velocity(&q(&zs, "sunny", Branch::Source)).unwrap();
            let vt = b.velocity(&q(&zt, "snowy", Branch::Target)).unwrap();
            let dv = velocity_difference(&vt, &vs).unwrap();
            assert!(dv.max_abs_diff(&expected).unwrap() < 1e-12);
        }
    }

    #[test]
    fn flowedit_point_mass_closed_form() {
        let shape = Shape::new(4, 4, 6);
        for steps in [1, 7, 50] {
            let (mut b, ms, mt) = point_mass(shape, 3);
            let z0 = oracle::random_grid(shape, 5);
            let out = run_flowedit(&z0, &mut b, &prompts(), &flowedit_cfg(steps, steps, 9)).unwrap();
            let expected = z0.add(&mt.sub(&ms).unwrap()).unwrap();
            assert!(out.latent.max_abs_diff(&expected).unwrap() <= 1e-9);
            assert_eq!(out.steps.len(), steps);
            assert!(out.steps.iter().all(|r| r.losses.is_empty()));
        }
    }

    #[test]
    fn identical_prompts_leave_latent_unchanged() {
        let shape = Shape::new(4, 4, 4);
        let (mut b, _, _) = point_mass(shape, 3);
        let z0 = oracle::random_grid(shape, 5);
        let p = PromptPair::new("sunny", "sunny").unwrap();
        let out = run_flowedit(&z0, &mut b, &p, &flowedit_cfg(20, 15, 1)).unwrap();
        assert!(out.latent.max_abs_diff(&z0).unwrap() <= 1e-9);
    }

    #[test]
    fn pairing_average_is_idle_on_constant_fields() {
        let shape = Shape::new(4, 4, 4);
        let mut b = LinearBackend::new(AnalyticCodec::default())
            .with_field("sunny", LinearField::constant(oracle::random_grid(shape, 1)))
            .unwrap()
            .with_field("snowy", LinearField::constant(oracle::random_grid(shape, 2)))
            .unwrap();
        let z0 = oracle::random_grid(shape, 5);
        let one = run_flowedit(&z0, &mut b, &prompts(), &flowedit_cfg(10, 8, 4)).unwrap();
        let three = run_flowedit(
            &z0,
            &mut b,
            &prompts(),
            &EditConfig {
                n_avg: 3,
                ..flowedit_cfg(10, 8, 4)
            },
        )
        .unwrap();
        assert!(one.latent.max_abs_diff(&three.latent).unwrap() <= 1e-12);
    }

    #[test]
    fn mode_preconditions_are_enforced() {
        let shape = Shape::new(4, 4, 4);
        let (mut b, _, _) = point_mass(shape, 3);
        let z0 = oracle::random_grid(shape, 5);
        let cfg = EditConfig::default();
        assert!(run_flowedit(&z0, &mut b, &prompts(), &cfg).is_err());
        let fe = flowedit_cfg(10, 5, 0);
        assert!(run_driveflow(&z0, &Layout::empty(32, 32), &mut b, &prompts(), &fe).is_err());
    }

    #[test]
    fn backend_errors_carry_step_context() {
        let shape = Shape::new(4, 4, 4);
        let (mut b, _, _) = point_mass(shape, 3);
        let z0 = oracle::random_grid(shape, 5);
        let p = PromptPair::new("sunny", "foggy").unwrap();
        let err = run_flowedit(&z0, &mut b, &p, &flowedit_cfg(10, 5, 0)).unwrap_err();
        assert!(matches!(err, Error::AtStep { step: 5, .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn driveflow_logs_inner_iterations() {
        let shape = Shape::new(4, 4, 4);
        let (mut b, _, _) = point_mass(shape, 3);
        let z0 = oracle::random_grid(shape, 5);
        let cfg = EditConfig {
            steps: 10,
            n_max: 6,
            ..EditConfig::default()
        };
        let mut layout = Layout::empty(32, 32);
        layout
            .boxes
            .push(crate::mask::ObjectBox::new("Car", 4.0, 4.0, 20.0, 12.0));
        let out = run_driveflow(&z0, &layout, &mut b, &prompts(), &cfg).unwrap();
        assert_eq!(out.steps.len(), 6);
        assert!(out.steps.iter().all(|r| r.losses.len() == 5));
        assert_eq!(
            out.steps.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![6, 5, 4, 3, 2, 1]
        );
    }
}
