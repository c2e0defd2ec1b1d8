//! Dense grid arithmetic, Gaussian kernels, separable blur and the
//! low/high frequency split of velocity fields.

mod blur;
mod grid;
mod kernel;

pub use blur::{blur, blur_transpose, decompose, high_pass, high_pass_transpose, FrequencySplit};
pub use grid::{grid_combine, Grid, Shape};
pub use kernel::{make_gaussian_kernel, GaussianKernel, KernelSpec};
