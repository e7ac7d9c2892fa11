//! Two-dimensional DFT of a channel, DC centralization, and the
//! log-magnitude / phase planes derived from the centralized spectrum.
//!
//! Index convention: entry `(ky, kx)` of the transform of an `rows x cols`
//! channel `I` is `sum_y sum_x I[y][x] * exp(-2 pi i (kx x / cols + ky y / rows))`.
//! No normalization is applied on the forward transform.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::image_io::ChannelMatrix;

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![Complex64::new(0.0, 0.0); rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.cols + col] = value;
    }
}

/// Planned forward transform for one channel size. Reusable across
/// channels of equal dimensions.
#[derive(Clone)]
pub struct Dft2 {
    rows: usize,
    cols: usize,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Dft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fft: planner.plan_fft_forward(cols),
            col_fft: planner.plan_fft_forward(rows),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Transforms `channel`, whose dimensions must match the plan.
    pub fn process(&self, channel: &ChannelMatrix) -> ComplexMatrix {
        assert_eq!(
            (channel.rows(), channel.cols()),
            (self.rows, self.cols),
            "channel does not match planned DFT size"
        );
        let (rows, cols) = (self.rows, self.cols);
        let mut data: Vec<Complex64> = channel
            .samples()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();

        let mut scratch =
            vec![Complex64::default(); self.row_fft.get_inplace_scratch_len().max(self.col_fft.get_inplace_scratch_len())];
        self.row_fft.process_with_scratch(&mut data, &mut scratch);

        let mut transposed = transpose(&data, rows, cols);
        self.col_fft.process_with_scratch(&mut transposed, &mut scratch);
        ComplexMatrix::new(rows, cols, transpose(&transposed, cols, rows))
    }
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    // Tiled so both sides stay in cache for large images.
    const TILE: usize = 32;
    let mut out = vec![Complex64::default(); data.len()];
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    out[c * rows + r] = data[r * cols + c];
                }
            }
        }
    }
    out
}

/// Unnormalized 2D DFT of a real channel.
pub fn dft2(channel: &ChannelMatrix) -> ComplexMatrix {
    Dft2::new(channel.rows(), channel.cols()).process(channel)
}

fn circular_shift(spectrum: &ComplexMatrix, shift_rows: usize, shift_cols: usize) -> ComplexMatrix {
    let (rows, cols) = (spectrum.rows, spectrum.cols);
    let mut out = ComplexMatrix::zeros(rows, cols);
    for r in 0..rows {
        let dst_r = (r + shift_rows) % rows;
        for c in 0..cols {
            out.data[dst_r * cols + (c + shift_cols) % cols] = spectrum.data[r * cols + c];
        }
    }
    out
}

/// Moves the zero-frequency entry from `(0, 0)` to `(rows / 2, cols / 2)`
/// (floor division) with a circular shift.
pub fn centralize(spectrum: &ComplexMatrix) -> ComplexMatrix {
    circular_shift(spectrum, spectrum.rows / 2, spectrum.cols / 2)
}

/// Inverse of [`centralize`].
pub fn decentralize(spectrum: &ComplexMatrix) -> ComplexMatrix {
    let (rows, cols) = (spectrum.rows, spectrum.cols);
    circular_shift(spectrum, rows - rows / 2, cols - cols / 2)
}

/// Log-magnitude and phase planes of a centralized spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedSpectrum {
    rows: usize,
    cols: usize,
    log_magnitude: Vec<f64>,
    phase: Vec<f64>,
}

impl CentralizedSpectrum {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `ln(|z| + 1)` per entry, row-major.
    pub fn log_magnitude(&self) -> &[f64] {
        &self.log_magnitude
    }

    /// `arg(z)` in `(-pi, pi]` per entry, row-major.
    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    /// Builds planes directly, e.g. for synthetic spectra in tests.
    /// Phases are folded into `(-pi, pi]`.
    pub fn from_planes(rows: usize, cols: usize, log_magnitude: Vec<f64>, phase: Vec<f64>) -> Self {
        assert_eq!(log_magnitude.len(), rows * cols);
        assert_eq!(phase.len(), rows * cols);
        let phase = phase.into_iter().map(wrap_phase).collect();
        Self {
            rows,
            cols,
            log_magnitude,
            phase,
        }
    }
}

fn wrap_phase(theta: f64) -> f64 {
    let wrapped = theta.sin().atan2(theta.cos());
    if wrapped <= -PI {
        PI
    } else {
        wrapped
    }
}

/// Argument of `z` in `(-pi, pi]`, with `arg(0) = 0`.
pub fn phase_of(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let theta = z.im.atan2(z.re);
    // atan2(-0.0, negative) yields -pi
    if theta <= -PI {
        PI
    } else {
        theta
    }
}

pub fn to_planes(spectrum: &ComplexMatrix) -> CentralizedSpectrum {
    let log_magnitude = spectrum.data.iter().map(|z| z.norm().ln_1p()).collect();
    let phase = spectrum.data.iter().map(|&z| phase_of(z)).collect();
    CentralizedSpectrum {
        rows: spectrum.rows,
        cols: spectrum.cols,
        log_magnitude,
        phase,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_dft(ch: &ChannelMatrix) -> ComplexMatrix {
        let (ny, nx) = (ch.rows(), ch.cols());
        let mut out = ComplexMatrix::zeros(ny, nx);
        for ky in 0..ny {
            for kx in 0..nx {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..ny {
                    for x in 0..nx {
                        let angle = -2.0
                            * PI
                            * ((kx * x) as f64 / nx as f64 + (ky * y) as f64 / ny as f64);
                        acc += ch.get(y, x) * Complex64::from_polar(1.0, angle);
                    }
                }
                out.set(ky, kx, acc);
            }
        }
        out
    }

    fn channel(rows: usize, cols: usize, seed: u64) -> ChannelMatrix {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ChannelMatrix::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 256) as f64
        })
        .unwrap()
    }

    #[test]
    fn constant_channel_is_dc_only() {
        let c = 17.0;
        let ch = ChannelMatrix::new(6, 4, vec![c; 24]).unwrap();
        let s = dft2(&ch);
        assert!((s.get(0, 0).re - c * 24.0).abs() < 1e-9);
        for (i, z) in s.data().iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-9, "entry {i} = {z}");
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let ch = ChannelMatrix::from_fn(5, 3, |r, c| if r == 0 && c == 0 { 1.0 } else { 0.0 }).unwrap();
        for z in dft2(&ch).data() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn random_5x7_matches_naive() {
        let ch = channel(5, 7, 11);
        let fast = dft2(&ch);
        let slow = naive_dft(&ch);
        let scale = slow.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn centralize_moves_dc() {
        let mut m = ComplexMatrix::zeros(4, 4);
        m.set(0, 0, Complex64::new(1.0, 0.0));
        assert_eq!(centralize(&m).get(2, 2), Complex64::new(1.0, 0.0));

        let mut m = ComplexMatrix::zeros(5, 5);
        m.set(0, 0, Complex64::new(1.0, 0.0));
        // 5 / 2 = 2
        assert_eq!(centralize(&m).get(2, 2), Complex64::new(1.0, 0.0));

        let mut m = ComplexMatrix::zeros(3, 6);
        m.set(0, 0, Complex64::new(1.0, 0.0));
        assert_eq!(centralize(&m).get(1, 3), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn constant_image_spectrum_centralizes_to_single_entry() {
        let ch = ChannelMatrix::new(5, 6, vec![3.0; 30]).unwrap();
        let c = centralize(&dft2(&ch));
        for r in 0..5 {
            for col in 0..6 {
                let z = c.get(r, col);
                if (r, col) == (2, 3) {
                    assert!((z.re - 90.0).abs() < 1e-9);
                } else {
                    assert!(z.norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn plane_values() {
        let m = ComplexMatrix::new(
            2,
            2,
            vec![
                Complex64::new(0.0, 0.0),
                Complex64::new(-3.0, 0.0),
                Complex64::new(std::f64::consts::E - 1.0, 0.0),
                Complex64::new(-3.0, -0.0),
            ],
        );
        let p = to_planes(&m);
        assert_eq!((p.log_magnitude()[0], p.phase()[0]), (0.0, 0.0));
        assert!((p.log_magnitude()[1] - 4f64.ln()).abs() < 1e-15);
        assert_eq!(p.phase()[1], PI);
        assert!((p.log_magnitude()[2] - 1.0).abs() < 1e-15);
        assert_eq!(p.phase()[2], 0.0);
        assert_eq!(p.phase()[3], PI);
    }

    #[test]
    fn from_planes_wraps_phase() {
        let p = CentralizedSpectrum::from_planes(2, 2, vec![0.0; 4], vec![-PI, 3.0 * PI, 0.5, -7.0]);
        for &ph in p.phase() {
            assert!(ph > -PI && ph <= PI);
        }
        assert_eq!(p.phase()[0], PI);
    }

    proptest! {
        #[test]
        fn hermitian_symmetry(rows in 2usize..10, cols in 2usize..10, seed in any::<u64>()) {
            let s = dft2(&channel(rows, cols, seed));
            let scale = s.get(0, 0).norm().max(1.0);
            for u in 0..rows {
                for v in 0..cols {
                    let a = s.get(u, v);
                    let b = s.get((rows - u) % rows, (cols - v) % cols).conj();
                    prop_assert!((a - b).norm() <= 1e-10 * scale);
                }
            }
        }

        #[test]
        fn parseval(rows in 2usize..24, cols in 2usize..24, seed in any::<u64>()) {
            let ch = channel(rows, cols, seed);
            let s = dft2(&ch);
            let spatial: f64 = ch.samples().iter().map(|v| v * v).sum();
            let freq: f64 = s.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / (rows * cols) as f64;
            prop_assert!((spatial - freq).abs() <= 1e-6 * spatial.max(1.0));
        }

        #[test]
        fn matches_naive_up_to_8x8(rows in 2usize..=8, cols in 2usize..=8, seed in any::<u64>()) {
            let ch = channel(rows, cols, seed);
            let fast = dft2(&ch);
            let slow = naive_dft(&ch);
            let scale = slow.data().iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                prop_assert!((a - b).norm() <= 1e-9 * scale);
            }
        }

        #[test]
        fn centralize_roundtrip_is_exact(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
            let mut state = seed;
            let data = (0..rows * cols)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    Complex64::new((state >> 11) as f64, (state >> 20) as f64 * -1.5)
                })
                .collect();
            let m = ComplexMatrix::new(rows, cols, data);
            prop_assert_eq!(decentralize(&centralize(&m)), m.clone());
            prop_assert_eq!(centralize(&decentralize(&m)), m);
        }
    }
}
