use super::grid::Grid;
use super::kernel::GaussianKernel;

/// Low/high frequency parts of a grid; `low + high` reconstructs the source.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencySplit {
    pub low: Grid,
    pub high: Grid,
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

// One 1-D replicate-padded pass over every line of every channel.
// `stride` steps along the filtered axis; lines are enumerated by (plane, start).
fn pass_forward(src: &[f64], dst: &mut [f64], w: &[f64], len: usize, lines: impl Iterator<Item = (usize, usize)>) {
    let r = (w.len() / 2) as isize;
    let mut line = vec![0.0; len];
    for (start, stride) in lines {
        for (i, v) in line.iter_mut().enumerate() {
            *v = src[start + i * stride];
        }
        for i in 0..len {
            let mut acc = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                acc += wj * line[clamp_index(i as isize + j as isize - r, len)];
            }
            dst[start + i * stride] = acc;
        }
    }
}

// Adjoint of `pass_forward`: scatter each output back onto the clamped taps.
fn pass_adjoint(src: &[f64], dst: &mut [f64], w: &[f64], len: usize, lines: impl Iterator<Item = (usize, usize)>) {
    let r = (w.len() / 2) as isize;
    let mut acc = vec![0.0; len];
    for (start, stride) in lines {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..len {
            let g = src[start + i * stride];
            for (j, &wj) in w.iter().enumerate() {
                acc[clamp_index(i as isize + j as isize - r, len)] += wj * g;
            }
        }
        for (i, v) in acc.iter().enumerate() {
            dst[start + i * stride] = *v;
        }
    }
}

fn rows(g: &Grid) -> impl Iterator<Item = (usize, usize)> {
    let (h, w) = (g.height(), g.width());
    (0..g.channels() * h).map(move |row| (row * w, 1))
}

fn cols(g: &Grid) -> impl Iterator<Item = (usize, usize)> {
    let (h, w) = (g.height(), g.width());
    (0..g.channels()).flat_map(move |c| (0..w).map(move |x| (c * h * w + x, w)))
}

/// Per-channel Gaussian blur with clamp-to-edge padding, as a horizontal
/// then a vertical 1-D pass.
pub fn blur(g: &Grid, kernel: &GaussianKernel) -> Grid {
    if kernel.size() == 1 {
        return g.clone();
    }
    let w = kernel.weights1d();
    let mut tmp = vec![0.0; g.data().len()];
    pass_forward(g.data(), &mut tmp, w, g.width(), rows(g));
    let mut out = vec![0.0; tmp.len()];
    pass_forward(&tmp, &mut out, w, g.height(), cols(g));
    Grid::from_parts_unchecked(g.shape(), out)
}

/// Transpose of [`blur`] as a linear operator.
///
/// Clamped taps pile weight onto the border cells, so the operator is not
/// self-adjoint near the edges; this applies the exact transpose.
pub fn blur_transpose(g: &Grid, kernel: &GaussianKernel) -> Grid {
    if kernel.size() == 1 {
        return g.clone();
    }
    let w = kernel.weights1d();
    let mut tmp = vec![0.0; g.data().len()];
    pass_adjoint(g.data(), &mut tmp, w, g.height(), cols(g));
    let mut out = vec![0.0; tmp.len()];
    pass_adjoint(&tmp, &mut out, w, g.width(), rows(g));
    Grid::from_parts_unchecked(g.shape(), out)
}

pub fn decompose(g: &Grid, kernel: &GaussianKernel) -> FrequencySplit {
    let low = blur(g, kernel);
    let high = g.sub(&low).expect("blur preserves shape");
    FrequencySplit { low, high }
}

/// `(I - B)` applied to `g`.
pub fn high_pass(g: &Grid, kernel: &GaussianKernel) -> Grid {
    decompose(g, kernel).high
}

/// `(I - B)ᵀ` applied to `g`.
pub fn high_pass_transpose(g: &Grid, kernel: &GaussianKernel) -> Grid {
    g.sub(&blur_transpose(g, kernel)).expect("blur preserves shape")
}
