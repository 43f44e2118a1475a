use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{mean_std, PostMap, SegmentStat, StatDomain};
use crate::error::{Error, Result};
use crate::model::{Matrix, Support, SupportMap};

const LOG_POWER_EPS: f64 = 1e-12;

/// One-sided magnitudes |X(k)|, k = 0..=n/2, of the unnormalized n-point DFT
/// of `x` zero-padded to length n.
pub fn dft_magnitudes(x: &[f64], n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().take(n / 2 + 1).map(|c| c.norm()).collect()
}

/// Short-time spectra over interior frames. Output columns are channel-major:
/// channel c occupies columns c*(n_fft/2+1) .. (c+1)*(n_fft/2+1).
pub fn apply_stft(
    window: usize,
    stride: usize,
    n_fft: usize,
    post_map: PostMap,
    x: &Matrix,
) -> Result<(Matrix, SupportMap)> {
    if window == 0 || stride == 0 || window > n_fft {
        return Err(Error::Spec(format!(
            "stft needs 1 <= window <= n_fft and stride >= 1 (window {window}, n_fft {n_fft}, stride {stride})"
        )));
    }
    if x.rows() < window {
        return Err(Error::Shape(format!(
            "stft window {window} longer than series of length {}",
            x.rows()
        )));
    }
    let bins = n_fft / 2 + 1;
    let support = SupportMap::sliding(x.rows(), window, stride);
    let mut out = Matrix::zeros(support.len(), x.cols() * bins);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for j in 0..support.len() {
        let start = j * stride;
        for c in 0..x.cols() {
            for (i, slot) in buf.iter_mut().enumerate() {
                let v = if i < window { x.get(start + i, c) } else { 0.0 };
                *slot = Complex::new(v, 0.0);
            }
            fft.process(&mut buf);
            for (k, z) in buf.iter().take(bins).enumerate() {
                let mag = z.norm();
                let v = match post_map {
                    PostMap::Magnitude => mag,
                    PostMap::Power => mag * mag,
                    PostMap::LogPower => (LOG_POWER_EPS + mag * mag).ln(),
                };
                out.set(j, c * bins + k, v);
            }
        }
    }
    Ok((out, support))
}

/// One descriptor row per series. Columns are channel-major in the order of
/// `stats`. The frequency domain works on A = |DFT(x)| / T, one-sided.
pub fn apply_segment_stats(domain: StatDomain, stats: &[SegmentStat], x: &Matrix) -> Result<(Matrix, SupportMap)> {
    if x.rows() == 0 {
        return Err(Error::Shape("segment statistics need at least one row".into()));
    }
    if stats.is_empty() {
        return Err(Error::Spec("segment statistics need at least one statistic".into()));
    }
    let t = x.rows();
    let mut row = Vec::with_capacity(x.cols() * stats.len());
    for c in 0..x.cols() {
        let series = x.column(c);
        let v = match domain {
            StatDomain::Time => series,
            StatDomain::Frequency => dft_magnitudes(&series, t).into_iter().map(|a| a / t as f64).collect(),
        };
        for stat in stats {
            row.push(statistic(*stat, &v));
        }
    }
    let support = SupportMap::new(vec![if t == 1 {
        Support::Point(1)
    } else {
        Support::Span { lo: 1, hi: t }
    }]);
    Ok((Matrix::new(1, row.len(), row)?, support))
}

fn statistic(stat: SegmentStat, v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let (mean, std) = mean_std(v);
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let central = |p: i32| v.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / n;
    match stat {
        SegmentStat::Mean => mean,
        SegmentStat::Max => max,
        SegmentStat::Min => min,
        SegmentStat::Rms => rms,
        SegmentStat::Var => std * std,
        SegmentStat::Std => std,
        SegmentStat::Skewness if std == 0.0 => 0.0,
        SegmentStat::Skewness => central(3) / std.powi(3),
        SegmentStat::Kurtosis if std == 0.0 => 0.0,
        SegmentStat::Kurtosis => central(4) / std.powi(4),
        SegmentStat::Energy => v.iter().map(|x| x * x).sum(),
        SegmentStat::PeakFactor if rms == 0.0 => 0.0,
        SegmentStat::PeakFactor => v.iter().map(|x| x.abs()).fold(0.0, f64::max) / rms,
        SegmentStat::Range => max - min,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(n^2) evaluation of the one-sided DFT magnitudes.
    fn naive_dft(x: &[f64], n: usize) -> Vec<f64> {
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn alternating_signal_sits_at_nyquist() {
        let x = Matrix::column_vector(vec![1.0, -1.0, 1.0, -1.0]);
        let (z, _) = apply_stft(4, 1, 4, PostMap::Magnitude, &x).unwrap();
        for (a, b) in z.data().iter().zip([0.0, 0.0, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_signal_concentrates_at_dc() {
        let x = Matrix::column_vector(vec![2.0; 4]);
        let (z, _) = apply_stft(4, 4, 4, PostMap::Magnitude, &x).unwrap();
        for (a, b) in z.data().iter().zip([8.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_agrees_with_direct_dft() {
        let x: Vec<f64> = (0..7).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        for n in [7, 8, 12] {
            for (a, b) in dft_magnitudes(&x, n).iter().zip(naive_dft(&x, n)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn stft_frames_match_interior_supports() {
        let x = Matrix::column_vector((0..10).map(|v| v as f64).collect());
        let (z, s) = apply_stft(4, 3, 4, PostMap::Power, &x).unwrap();
        assert_eq!(z.rows(), 3);
        let spans: Vec<_> = s.entries().iter().map(|e| e.bounds().unwrap()).collect();
        assert_eq!(spans, vec![(1, 4), (4, 7), (7, 10)]);
    }

    #[test]
    fn time_stats_on_ramp() {
        let x = Matrix::column_vector(vec![1.0, 2.0, 3.0, 4.0]);
        let (z, s) = apply_segment_stats(StatDomain::Time, &[SegmentStat::Mean, SegmentStat::Std], &x).unwrap();
        assert_eq!(z.data()[0], 2.5);
        assert!((z.data()[1] - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.entries(), &[Support::Span { lo: 1, hi: 4 }]);
    }

    #[test]
    fn constant_stats_are_degenerate_but_finite() {
        let x = Matrix::column_vector(vec![3.0; 6]);
        let stats = [
            SegmentStat::Mean,
            SegmentStat::Std,
            SegmentStat::Range,
            SegmentStat::Skewness,
            SegmentStat::Kurtosis,
        ];
        let (z, _) = apply_segment_stats(StatDomain::Time, &stats, &x).unwrap();
        assert_eq!(z.data(), &[3.0, 0.0, 0.0, 0.0, 0.0]);
        let (f, _) = apply_segment_stats(StatDomain::Frequency, &[SegmentStat::Max], &x).unwrap();
        assert!((f.data()[0] - 3.0).abs() < 1e-12);
    }
}
