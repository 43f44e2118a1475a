//! Short-time spectra and segment statistics as features.
//!
//! Run with `cargo run --example spectral_features`.

use phm_protocol::model::Matrix;
use phm_protocol::transforms::{apply_segment_stats, apply_stft, PostMap, SegmentStat, StatDomain};
use phm_protocol::Result;

fn main() -> Result<()> {
    // A tone at a quarter of the sampling rate, 32 samples.
    let signal: Vec<f64> = (0..32)
        .map(|t| (std::f64::consts::FRAC_PI_2 * t as f64).sin())
        .collect();
    let x = Matrix::column_vector(signal);

    let (spec, support) = apply_stft(8, 8, 8, PostMap::Magnitude, &x)?;
    println!("{} frames of {} bins", spec.rows(), spec.cols());
    for (row, s) in spec.iter_rows().zip(support.entries()) {
        let rounded: Vec<f64> = row.iter().map(|v| (v * 1e6).round() / 1e6).collect();
        println!("{s:?}: {rounded:?}");
    }

    let stats = [SegmentStat::Rms, SegmentStat::Kurtosis, SegmentStat::PeakFactor];
    let (time_stats, _) = apply_segment_stats(StatDomain::Time, &stats, &x)?;
    println!("time stats (rms, kurtosis, peak factor): {:?}", time_stats.row(0));
    Ok(())
}
