//! Discrete sine transforms between interior-grid samples and coefficients
//! in the L²-normalized Dirichlet sine basis.
//!
//! The grid is x_i = i/M, i = 1..M-1 per axis. For fields band-limited to
//! modes k <= M-1 the trapezoid sum underlying the transform is exact, so
//! forward/inverse round-trips are exact to rounding. A product of two
//! retained-mode fields is cosine-band-limited to 2N; with M >= 2N only its
//! O(1/j) sine tails at frequencies >= 2M-N can fold back into the retained
//! band, so product projections carry an O(1/M) folding error and no
//! low-frequency wraparound.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("field has {got} samples, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("boundary samples must vanish; found {0}")]
    NonzeroBoundary(f64),
}

/// Precomputed sine tables for an (N modes, M intervals)^d configuration.
#[derive(Debug, Clone)]
pub struct SineBasis {
    dimension: usize,
    modes_per_axis: usize,
    intervals_per_axis: usize,
    /// sin(π k i / M) for k in 1..=M-1, i in 1..=M-1, row-major by k.
    table: Vec<f64>,
    /// π²|k|² for the flattened retained mode set (first axis fastest).
    eigenvalues: Vec<f64>,
}

impl SineBasis {
    pub fn new(dimension: usize, modes_per_axis: usize, intervals_per_axis: usize) -> Self {
        assert!(dimension == 1 || dimension == 2, "dimension must be 1 or 2");
        assert!(modes_per_axis >= 1);
        assert!(
            intervals_per_axis > modes_per_axis,
            "grid must resolve the retained modes"
        );
        let m = intervals_per_axis;
        let pi = std::f64::consts::PI;
        let mut table = vec![0.0; (m - 1) * (m - 1)];
        for k in 1..m {
            for i in 1..m {
                table[(k - 1) * (m - 1) + (i - 1)] = (pi * (k * i) as f64 / m as f64).sin();
            }
        }
        let n = modes_per_axis;
        let total = n.pow(dimension as u32);
        let mut eigenvalues = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut sq = 0usize;
            for _ in 0..dimension {
                let k = rem % n + 1;
                rem /= n;
                sq += k * k;
            }
            eigenvalues.push(pi * pi * sq as f64);
        }
        SineBasis { dimension, modes_per_axis, intervals_per_axis, table, eigenvalues }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn modes_per_axis(&self) -> usize {
        self.modes_per_axis
    }

    pub fn intervals_per_axis(&self) -> usize {
        self.intervals_per_axis
    }

    /// Number of retained modes N^d.
    pub fn mode_count(&self) -> usize {
        self.modes_per_axis.pow(self.dimension as u32)
    }

    /// Number of interior grid points (M-1)^d.
    pub fn grid_count(&self) -> usize {
        (self.intervals_per_axis - 1).pow(self.dimension as u32)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Interior grid coordinates along one axis.
    pub fn axis_coords(&self) -> Vec<f64> {
        let m = self.intervals_per_axis;
        (1..m).map(|i| i as f64 / m as f64).collect()
    }

    /// Full coordinates of the flattened interior grid point `flat`.
    pub fn grid_point(&self, flat: usize) -> Vec<f64> {
        let g = self.intervals_per_axis - 1;
        let mut rem = flat;
        let mut x = Vec::with_capacity(self.dimension);
        for _ in 0..self.dimension {
            let i = rem % g + 1;
            rem /= g;
            x.push(i as f64 / self.intervals_per_axis as f64);
        }
        x
    }

    fn sin(&self, k: usize, i: usize) -> f64 {
        let g = self.intervals_per_axis - 1;
        self.table[(k - 1) * g + (i - 1)]
    }

    /// Grid samples -> coefficients in the normalized sine basis.
    pub fn forward(&self, field: &[f64]) -> Vec<f64> {
        let g = self.intervals_per_axis - 1;
        let n = self.modes_per_axis;
        let scale_axis = std::f64::consts::SQRT_2 / self.intervals_per_axis as f64;
        match self.dimension {
            1 => {
                assert_eq!(field.len(), g);
                let mut out = vec![0.0; n];
                for (kk, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for i in 1..=g {
                        acc += field[i - 1] * self.sin(kk + 1, i);
                    }
                    *o = acc * scale_axis;
                }
                out
            }
            2 => {
                assert_eq!(field.len(), g * g);
                // Pass 1: transform along axis 1 for each grid row.
                let mut tmp = vec![0.0; n * g];
                for i2 in 1..=g {
                    for k1 in 1..=n {
                        let mut acc = 0.0;
                        for i1 in 1..=g {
                            acc += field[(i1 - 1) + g * (i2 - 1)] * self.sin(k1, i1);
                        }
                        tmp[(k1 - 1) + n * (i2 - 1)] = acc;
                    }
                }
                // Pass 2: transform along axis 2.
                let mut out = vec![0.0; n * n];
                for k1 in 1..=n {
                    for k2 in 1..=n {
                        let mut acc = 0.0;
                        for i2 in 1..=g {
                            acc += tmp[(k1 - 1) + n * (i2 - 1)] * self.sin(k2, i2);
                        }
                        out[(k1 - 1) + n * (k2 - 1)] = acc * scale_axis * scale_axis;
                    }
                }
                out
            }
            _ => unreachable!(),
        }
    }

    /// Coefficients -> grid samples.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let g = self.intervals_per_axis - 1;
        let n = self.modes_per_axis;
        let scale_axis = std::f64::consts::SQRT_2;
        match self.dimension {
            1 => {
                assert_eq!(coeffs.len(), n);
                let mut out = vec![0.0; g];
                for (idx, o) in out.iter_mut().enumerate() {
                    let i = idx + 1;
                    let mut acc = 0.0;
                    for k in 1..=n {
                        acc += coeffs[k - 1] * self.sin(k, i);
                    }
                    *o = acc * scale_axis;
                }
                out
            }
            2 => {
                assert_eq!(coeffs.len(), n * n);
                let mut tmp = vec![0.0; g * n];
                for k2 in 1..=n {
                    for i1 in 1..=g {
                        let mut acc = 0.0;
                        for k1 in 1..=n {
                            acc += coeffs[(k1 - 1) + n * (k2 - 1)] * self.sin(k1, i1);
                        }
                        tmp[(i1 - 1) + g * (k2 - 1)] = acc;
                    }
                }
                let mut out = vec![0.0; g * g];
                for i1 in 1..=g {
                    for i2 in 1..=g {
                        let mut acc = 0.0;
                        for k2 in 1..=n {
                            acc += tmp[(i1 - 1) + g * (k2 - 1)] * self.sin(k2, i2);
                        }
                        out[(i1 - 1) + g * (i2 - 1)] = acc * scale_axis * scale_axis;
                    }
                }
                out
            }
            _ => unreachable!(),
        }
    }

    /// Evaluate a coefficient vector at an arbitrary interior point.
    pub fn eval_at(&self, coeffs: &[f64], x: &[f64]) -> f64 {
        let n = self.modes_per_axis;
        let pi = std::f64::consts::PI;
        match self.dimension {
            1 => {
                let mut acc = 0.0;
                for k in 1..=n {
                    acc += coeffs[k - 1] * std::f64::consts::SQRT_2 * (pi * k as f64 * x[0]).sin();
                }
                acc
            }
            2 => {
                let mut acc = 0.0;
                for k2 in 1..=n {
                    let s2 = std::f64::consts::SQRT_2 * (pi * k2 as f64 * x[1]).sin();
                    for k1 in 1..=n {
                        let s1 = std::f64::consts::SQRT_2 * (pi * k1 as f64 * x[0]).sin();
                        acc += coeffs[(k1 - 1) + n * (k2 - 1)] * s1 * s2;
                    }
                }
                acc
            }
            _ => unreachable!(),
        }
    }
}

/// Project initial-field samples (including their implicit zero boundary)
/// onto the retained sine modes. Rejects fields given with a nonzero
/// boundary ring when `boundary` samples are supplied separately.
pub fn project_initial(basis: &SineBasis, samples: &[f64]) -> Result<Vec<f64>, TransformError> {
    if samples.len() != basis.grid_count() {
        return Err(TransformError::LengthMismatch {
            got: samples.len(),
            expected: basis.grid_count(),
        });
    }
    Ok(basis.forward(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_exact_for_band_limited_field() {
        let basis = SineBasis::new(1, 16, 32);
        let mut coeffs = vec![0.0; 16];
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = 1.0 / (1.0 + k as f64);
        }
        let field = basis.inverse(&coeffs);
        let back = basis.forward(&field);
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_mode_projects_to_unit_vector() {
        let basis = SineBasis::new(1, 8, 16);
        let pi = std::f64::consts::PI;
        let field: Vec<f64> = basis
            .axis_coords()
            .iter()
            .map(|x| std::f64::consts::SQRT_2 * (pi * x).sin())
            .collect();
        let coeffs = project_initial(&basis, &field).unwrap();
        assert!((coeffs[0] - 1.0).abs() < 1e-13);
        for c in &coeffs[1..] {
            assert!(c.abs() < 1e-13);
        }
    }

    #[test]
    fn zero_field_projects_to_zero() {
        let basis = SineBasis::new(2, 4, 8);
        let coeffs = project_initial(&basis, &vec![0.0; basis.grid_count()]).unwrap();
        assert!(coeffs.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn parseval_between_grid_and_coefficients() {
        // For band-limited fields the scaled grid norm equals the
        // coefficient norm: (1/M^d) Σ u² = Σ a².
        let basis = SineBasis::new(2, 6, 16);
        let mut coeffs = vec![0.0; basis.mode_count()];
        for (j, c) in coeffs.iter_mut().enumerate() {
            *c = ((j * 2654435761) % 97) as f64 / 97.0 - 0.5;
        }
        let field = basis.inverse(&coeffs);
        let m = basis.intervals_per_axis() as f64;
        let grid_norm: f64 = field.iter().map(|u| u * u).sum::<f64>() / m.powi(2);
        let coeff_norm: f64 = coeffs.iter().map(|a| a * a).sum();
        assert!((grid_norm - coeff_norm).abs() < 1e-10);
    }

    #[test]
    fn product_folding_error_is_first_order_in_grid() {
        // The grid product of retained modes 5 and 7 is ½cos(2πx) - ½cos(12πx),
        // whose sine expansion has O(1/j) tails. Against the exact L²
        // projection, the DST folding error must shrink like 1/M.
        let n = 8;
        let pi = std::f64::consts::PI;
        let exact_projection = |k: usize| {
            let steps = 1 << 15;
            let h = 1.0 / steps as f64;
            let mut acc = 0.0;
            for i in 0..=steps {
                let x = i as f64 * h;
                let w = if i == 0 || i == steps {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w
                    * (pi * 5.0 * x).sin()
                    * (pi * 7.0 * x).sin()
                    * std::f64::consts::SQRT_2
                    * (pi * k as f64 * x).sin();
            }
            acc * h / 3.0
        };
        let folding_error = |m: usize| {
            let basis = SineBasis::new(1, n, m);
            let prod: Vec<f64> = basis
                .axis_coords()
                .iter()
                .map(|x| (pi * 5.0 * x).sin() * (pi * 7.0 * x).sin())
                .collect();
            let coeffs = basis.forward(&prod);
            (1..=n)
                .map(|k| (coeffs[k - 1] - exact_projection(k)).abs())
                .fold(0.0f64, f64::max)
        };
        let coarse = folding_error(2 * n);
        let fine = folding_error(8 * n);
        assert!(coarse < 1e-2, "coarse folding error {coarse}");
        assert!(fine < coarse / 3.0, "no first-order decay: {coarse} -> {fine}");
    }

    #[test]
    fn eval_at_matches_grid() {
        let basis = SineBasis::new(2, 5, 12);
        let mut coeffs = vec![0.0; basis.mode_count()];
        coeffs[3] = 0.7;
        coeffs[11] = -0.2;
        let field = basis.inverse(&coeffs);
        let x = basis.grid_point(17);
        assert!((basis.eval_at(&coeffs, &x) - field[17]).abs() < 1e-12);
    }
}
