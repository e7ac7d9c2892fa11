//! Radial aggregation of centralized spectra into fixed-length descriptors.
//!
//! Every frequency index is assigned to one of `n_r` equal-width annuli
//! around the DC entry. Per annulus we keep the mean log-magnitude and the
//! cosine of the circular-mean phase; three channels of (magnitude, phase)
//! profiles make a feature vector of length `6 * n_r`.

use thiserror::Error;

use crate::image_io::RgbImage;
use crate::spectrum::{centralize, to_planes, CentralizedSpectrum, Dft2};

/// Number of annuli used unless configured otherwise.
pub const DEFAULT_BIN_COUNT: usize = 64;

/// Resultant lengths below this make the circular mean undefined.
pub const MIN_RESULTANT: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum RadialError {
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("spectrum dimensions {rows}x{cols} are below the 2x2 minimum")]
    TooSmall { rows: usize, cols: usize },
    #[error("binning is for {expected:?} but spectrum is {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// Partition of a `rows x cols` index grid into annuli.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialBinning {
    rows: usize,
    cols: usize,
    max_radius: f64,
    edges: Vec<f64>,
    assignment: Vec<u32>,
    populations: Vec<usize>,
}

impl RadialBinning {
    pub fn bin_count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    /// `n_r + 1` increasing edges from 0 to `max_radius`.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Zero-based bin of each row-major index.
    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn bin_of(&self, row: usize, col: usize) -> usize {
        self.assignment[row * self.cols + col] as usize
    }

    /// Number of indices per bin.
    pub fn populations(&self) -> &[usize] {
        &self.populations
    }
}

/// Distance of `(row, col)` from the centralized DC position.
pub fn radius(rows: usize, cols: usize, row: usize, col: usize) -> f64 {
    let dy = row as f64 - (rows / 2) as f64;
    let dx = col as f64 - (cols / 2) as f64;
    dx.hypot(dy)
}

pub fn make_binning(rows: usize, cols: usize, bin_count: usize) -> Result<RadialBinning, RadialError> {
    if bin_count == 0 {
        return Err(RadialError::ZeroBins);
    }
    if rows < 2 || cols < 2 {
        return Err(RadialError::TooSmall { rows, cols });
    }
    let max_radius = [(0, 0), (0, cols - 1), (rows - 1, 0), (rows - 1, cols - 1)]
        .into_iter()
        .map(|(r, c)| radius(rows, cols, r, c))
        .fold(0.0, f64::max);
    let edges: Vec<f64> = (0..=bin_count)
        .map(|i| {
            if i == bin_count {
                max_radius
            } else {
                max_radius * i as f64 / bin_count as f64
            }
        })
        .collect();

    // Squared distances are integers, so `d >= edge[k]` is decided exactly as
    // `n^2 d^2 >= k^2 D^2` with `D` the farthest-corner distance.
    let (cy, cx) = ((rows / 2) as i64, (cols / 2) as i64);
    let far_y = cy.max(rows as i64 - 1 - cy) as u128;
    let far_x = cx.max(cols as i64 - 1 - cx) as u128;
    let far_sq = far_y * far_y + far_x * far_x;
    let n_sq = (bin_count as u128).pow(2);
    let at_or_past = |d_sq: u128, k: usize| n_sq * d_sq >= (k as u128).pow(2) * far_sq;
    let width = max_radius / bin_count as f64;
    let last = bin_count - 1;
    let mut populations = vec![0usize; bin_count];
    let mut assignment = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (dy, dx) = (r as i64 - cy, c as i64 - cx);
            let d_sq = (dy * dy + dx * dx) as u128;
            let mut bin = ((radius(rows, cols, r, c) / width) as usize).min(last);
            while bin > 0 && !at_or_past(d_sq, bin) {
                bin -= 1;
            }
            while bin < last && at_or_past(d_sq, bin + 1) {
                bin += 1;
            }
            populations[bin] += 1;
            assignment.push(bin as u32);
        }
    }
    Ok(RadialBinning {
        rows,
        cols,
        max_radius,
        edges,
        assignment,
        populations,
    })
}

/// Per-bin mean log-magnitude and cosine of circular-mean phase.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub magnitude: Vec<f64>,
    pub phase: Vec<f64>,
}

pub fn radial_reduce(
    spectrum: &CentralizedSpectrum,
    binning: &RadialBinning,
) -> Result<RadialProfile, RadialError> {
    let found = (spectrum.rows(), spectrum.cols());
    if found != binning.dims() {
        return Err(RadialError::DimensionMismatch {
            expected: binning.dims(),
            found,
        });
    }
    let n = binning.bin_count();
    let mut mag_sum = vec![0.0; n];
    let mut cos_sum = vec![0.0; n];
    let mut sin_sum = vec![0.0; n];
    for ((&bin, &m), &phi) in binning
        .assignment
        .iter()
        .zip(spectrum.log_magnitude())
        .zip(spectrum.phase())
    {
        let b = bin as usize;
        mag_sum[b] += m;
        let (s, c) = phi.sin_cos();
        cos_sum[b] += c;
        sin_sum[b] += s;
    }

    let mut magnitude = Vec::with_capacity(n);
    let mut phase = Vec::with_capacity(n);
    for b in 0..n {
        let count = binning.populations[b];
        if count == 0 {
            magnitude.push(0.0);
            phase.push(1.0);
            continue;
        }
        let inv = 1.0 / count as f64;
        magnitude.push(mag_sum[b] * inv);
        let (mc, ms) = (cos_sum[b] * inv, sin_sum[b] * inv);
        if mc.hypot(ms) < MIN_RESULTANT {
            phase.push(1.0);
        } else {
            phase.push(ms.atan2(mc).cos().clamp(-1.0, 1.0));
        }
    }
    Ok(RadialProfile { magnitude, phase })
}

/// Descriptor laid out as `[R.M | R.phase | G.M | G.phase | B.M | B.phase]`,
/// each block `n_r` long.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    bin_count: usize,
    values: Vec<f64>,
}

impl FeatureVector {
    /// Wraps raw values; the length must be a positive multiple of 6.
    pub fn from_values(values: Vec<f64>) -> Option<Self> {
        if values.is_empty() || !values.len().is_multiple_of(6) {
            return None;
        }
        Some(Self {
            bin_count: values.len() / 6,
            values,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Magnitude profile of channel `c` (0 = R, 1 = G, 2 = B).
    pub fn magnitude(&self, c: usize) -> &[f64] {
        let start = 2 * c * self.bin_count;
        &self.values[start..start + self.bin_count]
    }

    /// Phase profile of channel `c`.
    pub fn phase(&self, c: usize) -> &[f64] {
        let start = (2 * c + 1) * self.bin_count;
        &self.values[start..start + self.bin_count]
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Feature extractor for one image size. Holds the planned transform and
/// the binning so batches of equally sized images skip re-planning.
///
/// Extraction reads the uncentred transform directly: each raw index is
/// mapped to the bin of its centralized position, and the unit phasor is
/// taken as `z / |z|` rather than through the angle. This gives the same
/// values as [`radial_reduce`] on the centralized planes up to rounding.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    dft: Dft2,
    binning: RadialBinning,
    /// Bin of each raw (uncentred) DFT index.
    raw_assignment: Vec<u32>,
}

impl FeatureExtractor {
    pub fn new(rows: usize, cols: usize, bin_count: usize) -> Result<Self, RadialError> {
        let binning = make_binning(rows, cols, bin_count)?;
        let (sr, sc) = (rows / 2, cols / 2);
        let raw_assignment = (0..rows * cols)
            .map(|i| {
                let (r, c) = ((i / cols + sr) % rows, (i % cols + sc) % cols);
                binning.assignment[r * cols + c]
            })
            .collect();
        Ok(Self {
            dft: Dft2::new(rows, cols),
            binning,
            raw_assignment,
        })
    }

    pub fn binning(&self) -> &RadialBinning {
        &self.binning
    }

    pub fn extract(&self, image: &RgbImage) -> Result<FeatureVector, RadialError> {
        let found = (image.rows(), image.cols());
        if found != self.binning.dims() {
            return Err(RadialError::DimensionMismatch {
                expected: self.binning.dims(),
                found,
            });
        }
        let n = self.binning.bin_count();
        let mut values = Vec::with_capacity(6 * n);
        let mut mag_sum = vec![0.0; n];
        let mut cos_sum = vec![0.0; n];
        let mut sin_sum = vec![0.0; n];
        for channel in image.channels() {
            mag_sum.fill(0.0);
            cos_sum.fill(0.0);
            sin_sum.fill(0.0);
            let spectrum = self.dft.process(channel);
            for (&bin, z) in self.raw_assignment.iter().zip(spectrum.data()) {
                let b = bin as usize;
                let norm = (z.re * z.re + z.im * z.im).sqrt();
                mag_sum[b] += norm.ln_1p();
                if norm > 0.0 {
                    cos_sum[b] += z.re / norm;
                    sin_sum[b] += z.im / norm;
                } else {
                    // arg(0) = 0
                    cos_sum[b] += 1.0;
                }
            }
            let start = values.len();
            values.resize(start + 2 * n, 0.0);
            let (mags, phases) = values[start..].split_at_mut(n);
            for b in 0..n {
                let count = self.binning.populations[b];
                if count == 0 {
                    mags[b] = 0.0;
                    phases[b] = 1.0;
                    continue;
                }
                let inv = 1.0 / count as f64;
                mags[b] = mag_sum[b] * inv;
                let (mc, ms) = (cos_sum[b] * inv, sin_sum[b] * inv);
                phases[b] = if mc.hypot(ms) < MIN_RESULTANT {
                    1.0
                } else {
                    ms.atan2(mc).cos().clamp(-1.0, 1.0)
                };
            }
        }
        Ok(FeatureVector {
            bin_count: n,
            values,
        })
    }

    /// Reference path: centralize, build planes, then [`radial_reduce`].
    pub fn extract_via_planes(&self, image: &RgbImage) -> Result<FeatureVector, RadialError> {
        let n = self.binning.bin_count();
        let mut values = Vec::with_capacity(6 * n);
        for channel in image.channels() {
            let planes = to_planes(&centralize(&self.dft.process(channel)));
            let profile = radial_reduce(&planes, &self.binning)?;
            values.extend_from_slice(&profile.magnitude);
            values.extend_from_slice(&profile.phase);
        }
        Ok(FeatureVector {
            bin_count: n,
            values,
        })
    }
}

/// Full per-image pipeline: DFT, centralize, planes, radial reduction per
/// channel, concatenated.
pub fn extract_features(image: &RgbImage, bin_count: usize) -> Result<FeatureVector, RadialError> {
    FeatureExtractor::new(image.rows(), image.cols(), bin_count)?.extract(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_io::ChannelMatrix;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Kahan-summed mean.
    fn kahan_mean(xs: &[f64]) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &x in xs {
            let y = x - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        sum / xs.len() as f64
    }

    /// Assigns each index by scanning the edges in exact rational form
    /// (edge `i` is `i/n_r` of the corner distance) and averages with
    /// compensated summation.
    fn oracle(spec: &CentralizedSpectrum, n_r: usize) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
        let (rows, cols) = (spec.rows() as i64, spec.cols() as i64);
        let (cy, cx) = (rows / 2, cols / 2);
        let sq = |r: i64, c: i64| (r - cy).pow(2) + (c - cx).pow(2);
        let rmax_sq = [(0, 0), (0, cols - 1), (rows - 1, 0), (rows - 1, cols - 1)]
            .into_iter()
            .map(|(r, c)| sq(r, c))
            .max()
            .unwrap();
        let n = n_r as i64;
        // n^2 d^2 compared with i^2 rmax^2
        let past = |d_sq: i64, i: i64| n * n * d_sq >= i * i * rmax_sq;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_r];
        for r in 0..rows {
            for c in 0..cols {
                let d_sq = sq(r, c);
                let hits: Vec<usize> = (0..n)
                    .filter(|&i| past(d_sq, i) && (!past(d_sq, i + 1) || (i == n - 1 && d_sq <= rmax_sq)))
                    .map(|i| i as usize)
                    .collect();
                assert_eq!(hits.len(), 1, "index ({r},{c}) d^2={d_sq} hit {hits:?}");
                members[hits[0]].push((r * cols + c) as usize);
            }
        }
        let mut mags = Vec::new();
        let mut phases = Vec::new();
        for m in &members {
            if m.is_empty() {
                mags.push(0.0);
                phases.push(1.0);
                continue;
            }
            let lm: Vec<f64> = m.iter().map(|&i| spec.log_magnitude()[i]).collect();
            let cs: Vec<f64> = m.iter().map(|&i| spec.phase()[i].cos()).collect();
            let sn: Vec<f64> = m.iter().map(|&i| spec.phase()[i].sin()).collect();
            mags.push(kahan_mean(&lm));
            let (c, s) = (kahan_mean(&cs), kahan_mean(&sn));
            phases.push(if (c * c + s * s).sqrt() < 1e-12 { 1.0 } else { s.atan2(c).cos() });
        }
        (mags, phases, members.iter().map(Vec::len).collect())
    }

    fn random_spectrum(rows: usize, cols: usize, seed: u64) -> CentralizedSpectrum {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mags = (0..rows * cols).map(|_| 12.0 * next()).collect();
        let phases = (0..rows * cols).map(|_| (2.0 * next() - 1.0) * PI).collect();
        CentralizedSpectrum::from_planes(rows, cols, mags, phases)
    }

    #[test]
    fn binning_512_reaches_farthest_corner() {
        let b = make_binning(512, 512, 64).unwrap();
        // Center (256, 256); the farthest corner is (0, 0).
        let expected = (256.0f64 * 256.0 * 2.0).sqrt();
        assert!((b.max_radius() - expected).abs() < 1e-12);
        assert!((b.edges()[1] - expected / 64.0).abs() < 1e-12);
        assert_eq!(b.populations().iter().sum::<usize>(), 512 * 512);
        assert_eq!(b.bin_of(0, 0), 63);
        assert_eq!(b.bin_of(256, 256), 0);
    }

    #[test]
    fn single_bin_holds_everything() {
        let b = make_binning(2, 2, 1).unwrap();
        assert_eq!(b.populations(), &[4]);
    }

    #[test]
    fn dc_in_first_bin() {
        let b = make_binning(4, 4, 2).unwrap();
        assert_eq!(b.bin_of(2, 2), 0);
        assert_eq!(radius(4, 4, 2, 2), 0.0);
    }

    #[test]
    fn binning_rejects_bad_input() {
        assert_eq!(make_binning(4, 4, 0), Err(RadialError::ZeroBins));
        assert_eq!(make_binning(1, 4, 2), Err(RadialError::TooSmall { rows: 1, cols: 4 }));
    }

    #[test]
    fn edges_are_strictly_increasing() {
        for (r, c, n) in [(2, 2, 5), (7, 3, 16), (100, 130, 64)] {
            let b = make_binning(r, c, n).unwrap();
            assert_eq!(b.edges()[0], 0.0);
            assert_eq!(*b.edges().last().unwrap(), b.max_radius());
            assert!(b.edges().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn reduce_rejects_mismatched_binning() {
        let b = make_binning(4, 4, 2).unwrap();
        let s = random_spectrum(4, 5, 1);
        assert!(matches!(radial_reduce(&s, &b), Err(RadialError::DimensionMismatch { .. })));
    }

    #[test]
    fn constant_image_profile() {
        let c = 9.0;
        let ch = ChannelMatrix::new(8, 8, vec![c; 64]).unwrap();
        let img = RgbImage::from_gray(ch);
        let f = extract_features(&img, 4).unwrap();
        let b = make_binning(8, 8, 4).unwrap();
        let dc_pop = b.populations()[0] as f64;
        let expected = (c * 64.0 + 1.0).ln() / dc_pop;
        assert!((f.magnitude(0)[0] - expected).abs() < 1e-9);
        for &m in &f.magnitude(0)[1..] {
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn aligned_phases_give_one() {
        let s = CentralizedSpectrum::from_planes(4, 4, vec![1.0; 16], vec![0.0; 16]);
        let p = radial_reduce(&s, &make_binning(4, 4, 3).unwrap()).unwrap();
        assert!(p.phase.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cancelling_phases_fall_back_to_one() {
        // 2x2 with one bin: phases 0, pi, pi/2, -pi/2 cancel exactly.
        let s = CentralizedSpectrum::from_planes(2, 2, vec![0.0; 4], vec![0.0, PI, PI / 2.0, -PI / 2.0]);
        let p = radial_reduce(&s, &make_binning(2, 2, 1).unwrap()).unwrap();
        assert_eq!(p.phase, vec![1.0]);
    }

    #[test]
    fn empty_bins_use_neutral_values() {
        // 2x2 grid has radii {0, 1, 1, sqrt 2}; 16 bins leave most empty.
        let s = random_spectrum(2, 2, 5);
        let b = make_binning(2, 2, 16).unwrap();
        let p = radial_reduce(&s, &b).unwrap();
        for (i, &pop) in b.populations().iter().enumerate() {
            if pop == 0 {
                assert_eq!((p.magnitude[i], p.phase[i]), (0.0, 1.0));
            }
        }
        assert!(b.populations().contains(&0));
    }

    #[test]
    fn random_6x6_matches_oracle() {
        let s = random_spectrum(6, 6, 42);
        let p = radial_reduce(&s, &make_binning(6, 6, 4).unwrap()).unwrap();
        let (m, ph, _) = oracle(&s, 4);
        for i in 0..4 {
            assert!((p.magnitude[i] - m[i]).abs() <= 1e-9);
            assert!((p.phase[i] - ph[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn black_image_features() {
        let img = RgbImage::from_gray(ChannelMatrix::new(16, 16, vec![0.0; 256]).unwrap());
        let f = extract_features(&img, 8).unwrap();
        assert_eq!(f.len(), 48);
        for c in 0..3 {
            assert!(f.magnitude(c).iter().all(|&v| v == 0.0));
            assert!(f.phase(c).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn identical_channels_identical_blocks() {
        let ch = ChannelMatrix::from_fn(12, 10, |r, c| ((r * 31 + c * 17) % 256) as f64).unwrap();
        let img = RgbImage::from_gray(ch);
        let a = extract_features(&img, 8).unwrap();
        let b = extract_features(&img.clone(), 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.magnitude(0), a.magnitude(2));
        assert_eq!(a.phase(1), a.phase(2));
    }

    #[test]
    fn length_is_size_agnostic() {
        for (r, c) in [(32, 32), (100, 100), (512, 512), (100, 130)] {
            let ch = ChannelMatrix::from_fn(r, c, |y, x| ((x * 7 + y * 3) % 256) as f64).unwrap();
            let f = extract_features(&RgbImage::from_gray(ch), 64).unwrap();
            assert_eq!(f.len(), 384);
        }
    }

    #[test]
    fn extractor_rejects_other_sizes() {
        let ex = FeatureExtractor::new(8, 8, 4).unwrap();
        let img = RgbImage::from_gray(ChannelMatrix::new(8, 9, vec![0.0; 72]).unwrap());
        assert!(ex.extract(&img).is_err());
    }

    #[test]
    fn feature_vector_requires_multiple_of_six() {
        assert!(FeatureVector::from_values(vec![0.0; 7]).is_none());
        assert!(FeatureVector::from_values(vec![]).is_none());
        assert_eq!(FeatureVector::from_values(vec![0.0; 12]).unwrap().bin_count(), 2);
    }

    proptest! {
        #[test]
        fn reduce_matches_oracle_up_to_8x8(rows in 2usize..=8, cols in 2usize..=8, n_r in 1usize..10, seed in any::<u64>()) {
            let s = random_spectrum(rows, cols, seed);
            let b = make_binning(rows, cols, n_r).unwrap();
            let p = radial_reduce(&s, &b).unwrap();
            let (m, ph, pops) = oracle(&s, n_r);
            prop_assert_eq!(b.populations(), &pops[..]);
            for i in 0..n_r {
                prop_assert!((p.magnitude[i] - m[i]).abs() <= 1e-9);
                prop_assert!((p.phase[i] - ph[i]).abs() <= 1e-9);
            }
        }

        #[test]
        fn profile_ranges(rows in 2usize..20, cols in 2usize..20, n_r in 1usize..32, seed in any::<u64>()) {
            let s = random_spectrum(rows, cols, seed);
            let p = radial_reduce(&s, &make_binning(rows, cols, n_r).unwrap()).unwrap();
            prop_assert_eq!(p.magnitude.len(), n_r);
            prop_assert!(p.phase.iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert!(p.magnitude.iter().all(|&v| v >= 0.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fused_extraction_matches_planes(rows in 2usize..20, cols in 2usize..20, n_r in 1usize..12, seed in any::<u64>()) {
            let mut state = seed | 1;
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 256) as f64
            };
            let mut channel = || ChannelMatrix::from_fn(rows, cols, |_, _| next()).unwrap();
            let image = RgbImage::new(channel(), channel(), channel()).unwrap();
            let x = FeatureExtractor::new(rows, cols, n_r).unwrap();
            let fused = x.extract(&image).unwrap();
            let reference = x.extract_via_planes(&image).unwrap();
            for (a, b) in fused.values().iter().zip(reference.values()) {
                prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }
}
