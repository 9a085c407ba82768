//! Ground-truth density maps: one normalized Gaussian stamp per dot.

use crate::dataio::{DensityGrid, DotAnnotations};
use crate::error::{ClipError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub sigma: f64,
    pub truncation_radius: usize,
}

impl KernelSpec {
    /// Kernel with the default truncation radius `ceil(3 * sigma)`.
    pub fn new(sigma: f64) -> Result<Self> {
        let radius = (3.0 * sigma).ceil().max(1.0) as usize;
        Self::with_radius(sigma, radius)
    }

    pub fn with_radius(sigma: f64, truncation_radius: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ClipError::argument(format!(
                "kernel sigma must be > 0, got {sigma}"
            )));
        }
        if truncation_radius < 1 {
            return Err(ClipError::argument("kernel truncation radius must be >= 1"));
        }
        Ok(Self {
            sigma,
            truncation_radius,
        })
    }

    pub fn side(&self) -> usize {
        2 * self.truncation_radius + 1
    }
}

/// Square isotropic Gaussian of side `2r + 1`, normalized to sum 1.
pub fn gaussian_kernel(spec: &KernelSpec) -> DensityGrid {
    let r = spec.truncation_radius as isize;
    let side = spec.side();
    let denom = 2.0 * spec.sigma * spec.sigma;
    let mut values = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            values.push((-((dx * dx + dy * dy) as f64) / denom).exp());
        }
    }
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    DensityGrid::new(side, side, values).expect("gaussian kernel is finite and positive")
}

/// Cell a dot is stamped at: nearest integer pixel, kept inside the grid.
pub fn snap(coord: f64, extent: usize) -> usize {
    (coord.round().max(0.0) as usize).min(extent - 1)
}

/// Renders `dots` into a `height x width` density map.
///
/// Each dot contributes exactly one person: the kernel portion that falls
/// inside the image is rescaled to unit mass, so clipped border kernels keep
/// the total equal to the dot count.
pub fn render_density(
    dots: &DotAnnotations,
    height: usize,
    width: usize,
    spec: &KernelSpec,
) -> Result<DensityGrid> {
    if let Some(i) = dots.first_out_of_bounds(height, width) {
        let p = dots.points[i];
        return Err(ClipError::Validation {
            sample_id: format!("dot #{i}"),
            message: format!("({}, {}) lies outside the {height}x{width} grid", p.x, p.y),
        });
    }
    let kernel = gaussian_kernel(spec);
    let mut grid = DensityGrid::zeros(height, width);
    for p in &dots.points {
        stamp(
            &mut grid,
            &kernel,
            spec.truncation_radius,
            snap(p.y, height),
            snap(p.x, width),
        );
    }
    Ok(grid)
}

fn stamp(grid: &mut DensityGrid, kernel: &DensityGrid, radius: usize, row: usize, col: usize) {
    let (h, w) = (grid.height(), grid.width());
    let r0 = row.saturating_sub(radius);
    let r1 = (row + radius).min(h - 1);
    let c0 = col.saturating_sub(radius);
    let c1 = (col + radius).min(w - 1);
    // kernel cell (kr, kc) lands on grid cell (row + kr - radius, col + kc - radius)
    let kr0 = r0 + radius - row;
    let kc0 = c0 + radius - col;
    let side = kernel.width();
    let kv = kernel.values();

    let mut inside = 0.0;
    for kr in kr0..kr0 + (r1 - r0 + 1) {
        inside += kv[kr * side + kc0..kr * side + kc0 + (c1 - c0 + 1)]
            .iter()
            .sum::<f64>();
    }
    let values = grid.values_mut();
    for (i, r) in (r0..=r1).enumerate() {
        let krow = &kv[(kr0 + i) * side + kc0..];
        let grow = &mut values[r * w + c0..=r * w + c1];
        for (g, k) in grow.iter_mut().zip(krow) {
            *g += k / inside;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Point;
    use proptest::prelude::*;

    fn dots(points: &[(f64, f64)]) -> DotAnnotations {
        DotAnnotations::new(points.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    #[test]
    fn kernel_shape_and_mass() {
        let spec = KernelSpec::with_radius(2.0, 6).unwrap();
        let k = gaussian_kernel(&spec);
        assert_eq!((k.height(), k.width()), (13, 13));
        assert!((k.sum() - 1.0).abs() < 1e-12);
        assert_eq!(k.get(6, 6), k.max());
        let flipped = k.flip_horizontal();
        for (a, b) in k.values().iter().zip(flipped.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        for r in 0..13 {
            for c in 0..13 {
                assert!((k.get(r, c) - k.get(12 - r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_radius_is_three_sigma() {
        assert_eq!(KernelSpec::new(2.0).unwrap().truncation_radius, 6);
        assert_eq!(KernelSpec::new(1.5).unwrap().truncation_radius, 5);
        assert_eq!(KernelSpec::new(0.1).unwrap().truncation_radius, 1);
        assert!(KernelSpec::new(0.0).is_err());
        assert!(KernelSpec::with_radius(1.0, 0).is_err());
    }

    #[test]
    fn single_centered_dot() {
        let spec = KernelSpec::new(2.0).unwrap();
        let d = render_density(&dots(&[(16.0, 16.0)]), 33, 33, &spec).unwrap();
        assert!((d.sum() - 1.0).abs() < 1e-9);
        assert_eq!(d.get(16, 16), d.max());
    }

    #[test]
    fn empty_dots_render_zero() {
        let spec = KernelSpec::new(2.0).unwrap();
        let d = render_density(&DotAnnotations::default(), 8, 8, &spec).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corner_dot_keeps_count() {
        let spec = KernelSpec::new(2.0).unwrap();
        let pts = [
            (0.0, 0.0),
            (5.0, 7.0),
            (31.0, 31.0),
            (12.5, 20.2),
            (30.9, 0.4),
        ];
        let d = render_density(&dots(&pts), 32, 32, &spec).unwrap();
        assert!((d.sum() - 5.0).abs() < 5e-6);
    }

    #[test]
    fn rejects_out_of_bounds() {
        let spec = KernelSpec::new(2.0).unwrap();
        assert!(render_density(&dots(&[(32.0, 1.0)]), 32, 32, &spec).is_err());
    }

    #[test]
    fn kernel_larger_than_image() {
        let spec = KernelSpec::new(4.0).unwrap();
        let d = render_density(&dots(&[(1.0, 2.0)]), 3, 4, &spec).unwrap();
        assert!((d.sum() - 1.0).abs() < 1e-12);
    }

    fn arb_dots(h: usize, w: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0..(w as f64 - 1.0), 0.0..(h as f64)), 0..25)
    }

    proptest! {
        #[test]
        fn count_is_preserved(pts in arb_dots(20, 24), sigma in 0.5f64..4.0) {
            let spec = KernelSpec::new(sigma).unwrap();
            let d = render_density(&dots(&pts), 20, 24, &spec).unwrap();
            let n = pts.len() as f64;
            prop_assert!((d.sum() - n).abs() <= 1e-6 * n.max(1.0));
        }

        #[test]
        fn rendering_is_linear(a in arb_dots(16, 16), b in arb_dots(16, 16)) {
            let spec = KernelSpec::new(2.0).unwrap();
            let joint: Vec<_> = a.iter().chain(&b).copied().collect();
            let da = render_density(&dots(&a), 16, 16, &spec).unwrap();
            let db = render_density(&dots(&b), 16, 16, &spec).unwrap();
            let dj = render_density(&dots(&joint), 16, 16, &spec).unwrap();
            for i in 0..dj.values().len() {
                prop_assert!((dj.values()[i] - da.values()[i] - db.values()[i]).abs() <= 1e-9);
            }
        }

        #[test]
        fn flip_equivariance(pts in arb_dots(18, 21)) {
            let spec = KernelSpec::new(2.0).unwrap();
            let d = dots(&pts);
            let lhs = render_density(&d.flip_horizontal(21), 18, 21, &spec).unwrap();
            let rhs = render_density(&d, 18, 21, &spec).unwrap().flip_horizontal();
            for (a, b) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
