use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{CorruptMode, ImputeMode};
use crate::error::{Error, Result};
use crate::model::Matrix;

/// Fills NaNs channel by channel; observed entries are never touched.
pub fn apply_repair(mode: ImputeMode, means: Option<&[f64]>, x: &Matrix) -> Result<Matrix> {
    if mode == ImputeMode::Mean {
        match means {
            Some(m) if m.len() == x.cols() => {}
            Some(m) => {
                return Err(Error::Shape(format!(
                    "imputer fitted on {} channels applied to {}",
                    m.len(),
                    x.cols()
                )))
            }
            None => return Err(Error::Fit("mean imputation needs fitted train means".into())),
        }
    }
    let mut out = x.clone();
    for c in 0..x.cols() {
        let col = x.column(c);
        let observed: Vec<usize> = (0..col.len()).filter(|i| !col[*i].is_nan()).collect();
        if observed.len() == col.len() {
            continue;
        }
        let filled: Vec<f64> = match mode {
            ImputeMode::Zero => col.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect(),
            ImputeMode::Mean => {
                let m = means.expect("checked above")[c];
                col.iter().map(|v| if v.is_nan() { m } else { *v }).collect()
            }
            ImputeMode::Locf | ImputeMode::Linear if observed.is_empty() => {
                return Err(Error::Repair(format!(
                    "channel {c} has no observed values to {} from",
                    mode.as_str()
                )))
            }
            ImputeMode::Locf => {
                let mut last = col[observed[0]];
                col.iter()
                    .map(|v| {
                        if !v.is_nan() {
                            last = *v;
                        }
                        last
                    })
                    .collect()
            }
            ImputeMode::Linear => {
                let mut out = col.clone();
                let (first, last) = (observed[0], observed[observed.len() - 1]);
                for (i, slot) in out.iter_mut().enumerate() {
                    if !slot.is_nan() {
                        continue;
                    }
                    *slot = if i < first {
                        col[first]
                    } else if i > last {
                        col[last]
                    } else {
                        let right = observed.partition_point(|o| *o < i);
                        let (a, b) = (observed[right - 1], observed[right]);
                        let w = (i - a) as f64 / (b - a) as f64;
                        col[a] + w * (col[b] - col[a])
                    };
                }
                out
            }
        };
        for (t, v) in filled.into_iter().enumerate() {
            out.set(t, c, v);
        }
    }
    Ok(out)
}

/// Outcome of one corruption call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionReport {
    pub requested_ratio: f64,
    pub masked: usize,
    pub total: usize,
    /// Set when block placement ran out of room before reaching the target.
    pub shortfall: bool,
}

impl CorruptionReport {
    pub fn realized_ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.masked as f64 / self.total as f64
        }
    }
}

/// Seed for one unit, so units are corrupted independently of their order.
pub(crate) fn unit_seed(seed: u64, unit_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(unit_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Injects missing-completely-at-random NaNs. Block mode works per channel:
/// it draws a length, then a start uniformly among the positions where the
/// block would not overlap earlier ones, until at least ratio*T entries are
/// masked or no such position exists.
pub fn apply_corrupt(mode: CorruptMode, seed: u64, x: &Matrix) -> Result<(Matrix, CorruptionReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = x.clone();
    let (t_len, width) = (x.rows(), x.cols());
    let mut report = CorruptionReport {
        requested_ratio: 0.0,
        masked: 0,
        total: t_len * width,
        shortfall: false,
    };
    match mode {
        CorruptMode::Point { ratio } => {
            if !(0.0..=1.0).contains(&ratio) {
                return Err(Error::Spec(format!("corruption ratio {ratio} outside [0, 1]")));
            }
            report.requested_ratio = ratio;
            for t in 0..t_len {
                for c in 0..width {
                    if rng.random_bool(ratio) {
                        out.set(t, c, f64::NAN);
                        report.masked += 1;
                    }
                }
            }
        }
        CorruptMode::Block {
            ratio,
            min_len,
            max_len,
        } => {
            if !(0.0..=1.0).contains(&ratio) {
                return Err(Error::Spec(format!("corruption ratio {ratio} outside [0, 1]")));
            }
            if min_len == 0 || min_len > max_len || max_len > t_len {
                return Err(Error::Spec(format!(
                    "block lengths must satisfy 1 <= {min_len} <= {max_len} <= T = {t_len}"
                )));
            }
            report.requested_ratio = ratio;
            let target = (ratio * t_len as f64).ceil() as usize;
            for c in 0..width {
                let mut taken = vec![false; t_len];
                let mut masked = 0;
                while masked < target {
                    let len = rng.random_range(min_len..=max_len);
                    let starts: Vec<usize> = (0..=t_len - len)
                        .filter(|s| !taken[*s..*s + len].iter().any(|b| *b))
                        .collect();
                    if starts.is_empty() {
                        report.shortfall = true;
                        break;
                    }
                    let s = starts[rng.random_range(0..starts.len())];
                    for (t, slot) in taken.iter_mut().enumerate().skip(s).take(len) {
                        *slot = true;
                        out.set(t, c, f64::NAN);
                    }
                    masked += len;
                }
                report.masked += masked;
            }
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column_vector(v.to_vec())
    }

    #[test]
    fn linear_fills_midpoint() {
        let z = apply_repair(ImputeMode::Linear, None, &col(&[1.0, f64::NAN, 3.0])).unwrap();
        assert_eq!(z.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn locf_falls_back_to_first_observed() {
        let z = apply_repair(ImputeMode::Locf, None, &col(&[f64::NAN, 5.0])).unwrap();
        assert_eq!(z.data(), &[5.0, 5.0]);
    }

    #[test]
    fn mean_uses_fitted_value() {
        let z = apply_repair(ImputeMode::Mean, Some(&[2.5]), &col(&[f64::NAN])).unwrap();
        assert_eq!(z.data(), &[2.5]);
    }

    #[test]
    fn all_nan_channel_cannot_be_interpolated() {
        let err = apply_repair(ImputeMode::Linear, None, &col(&[f64::NAN, f64::NAN])).unwrap_err();
        assert!(matches!(err, Error::Repair(m) if m.contains("channel 0")));
    }

    #[test]
    fn zero_rate_is_identity_and_full_rate_masks_all() {
        let x = col(&[1.0, 2.0, 3.0]);
        let (z, _) = apply_corrupt(CorruptMode::Point { ratio: 0.0 }, 9, &x).unwrap();
        assert!(z.bit_eq(&x));
        let (z, r) = apply_corrupt(CorruptMode::Point { ratio: 1.0 }, 9, &x).unwrap();
        assert!(z.data().iter().all(|v| v.is_nan()));
        assert_eq!(r.realized_ratio(), 1.0);
    }

    #[test]
    fn fixed_length_blocks_hit_the_target_exactly() {
        let x = col(&[0.0; 20]);
        let mode = CorruptMode::Block {
            ratio: 0.3,
            min_len: 3,
            max_len: 3,
        };
        for seed in 0..50 {
            let (z, r) = apply_corrupt(mode, seed, &x).unwrap();
            assert_eq!(z.data().iter().filter(|v| v.is_nan()).count(), 6);
            assert!((r.realized_ratio() - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_seeds_differ_by_unit() {
        assert_ne!(unit_seed(1, "a"), unit_seed(1, "b"));
        assert_eq!(unit_seed(1, "a"), unit_seed(1, "a"));
    }
}
