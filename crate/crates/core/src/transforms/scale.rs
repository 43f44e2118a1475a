use super::state::FittedTransformState;
use super::{Direction, FitScope, StageKind};
use crate::error::{Error, Result};
use crate::model::Matrix;

/// Frozen parameters of a pointwise scaler.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleParams {
    MinMax { min: Vec<f64>, max: Vec<f64> },
    Standard { mean: Vec<f64>, std: Vec<f64> },
    Constant(f64),
}

impl ScaleParams {
    /// Reads the parameters for `unit` out of a fitted state.
    pub fn from_state(kind: &StageKind, state: &FittedTransformState, unit: &str, scope: FitScope) -> Result<Self> {
        match kind {
            StageKind::MinMax => Ok(Self::MinMax {
                min: state.scoped("min", unit, scope)?.to_vec(),
                max: state.scoped("max", unit, scope)?.to_vec(),
            }),
            StageKind::Standard => Ok(Self::Standard {
                mean: state.scoped("mean", unit, scope)?.to_vec(),
                std: state.scoped("std", unit, scope)?.to_vec(),
            }),
            StageKind::Constant { factor } => Ok(Self::Constant(*factor)),
            other => Err(Error::Configuration(format!(
                "{} is not a pointwise scaler",
                other.name()
            ))),
        }
    }

    fn width(&self) -> Option<usize> {
        match self {
            ScaleParams::MinMax { min, .. } => Some(min.len()),
            ScaleParams::Standard { mean, .. } => Some(mean.len()),
            ScaleParams::Constant(_) => None,
        }
    }
}

/// Elementwise scaling. Degenerate channels (min = max, or sigma = 0) map to
/// 0 going forward; the minmax inverse then returns min.
pub fn apply_pointwise_scale(params: &ScaleParams, x: &Matrix, direction: Direction) -> Result<Matrix> {
    if let Some(w) = params.width() {
        if w != x.cols() {
            return Err(Error::Shape(format!(
                "scaler fitted on {w} channels applied to {}",
                x.cols()
            )));
        }
    }
    if let ScaleParams::Constant(c) = params {
        if *c == 0.0 {
            return Err(Error::Spec("constant factor must be non-zero".into()));
        }
    }
    let mut out = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let v = x.get(i, j);
            let z = match (params, direction) {
                (ScaleParams::MinMax { min, max }, Direction::Forward) => {
                    let range = max[j] - min[j];
                    if range == 0.0 {
                        if v.is_nan() {
                            v
                        } else {
                            0.0
                        }
                    } else {
                        (v - min[j]) / range
                    }
                }
                (ScaleParams::MinMax { min, max }, Direction::Inverse) => {
                    let range = max[j] - min[j];
                    if range == 0.0 {
                        if v.is_nan() {
                            v
                        } else {
                            min[j]
                        }
                    } else {
                        v * range + min[j]
                    }
                }
                (ScaleParams::Standard { mean, std }, Direction::Forward) => {
                    if std[j] == 0.0 {
                        if v.is_nan() {
                            v
                        } else {
                            0.0
                        }
                    } else {
                        (v - mean[j]) / std[j]
                    }
                }
                (ScaleParams::Standard { mean, std }, Direction::Inverse) => {
                    if std[j] == 0.0 {
                        if v.is_nan() {
                            v
                        } else {
                            mean[j]
                        }
                    } else {
                        v * std[j] + mean[j]
                    }
                }
                (ScaleParams::Constant(c), Direction::Forward) => c * v,
                (ScaleParams::Constant(c), Direction::Inverse) => v / c,
            };
            out.set(i, j, z);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column_vector(v.to_vec())
    }

    #[test]
    fn minmax_midpoint() {
        let p = ScaleParams::MinMax {
            min: vec![2.0],
            max: vec![10.0],
        };
        let z = apply_pointwise_scale(&p, &col(&[6.0]), Direction::Forward).unwrap();
        assert_eq!(z.data(), &[0.5]);
    }

    #[test]
    fn standard_forward_value() {
        let p = ScaleParams::Standard {
            mean: vec![2.5],
            std: vec![1.25f64.sqrt()],
        };
        let z = apply_pointwise_scale(&p, &col(&[4.0]), Direction::Forward).unwrap();
        assert!((z.data()[0] - 1.341_640_786_499_874).abs() < 1e-12);
    }

    #[test]
    fn degenerate_channels_map_to_zero() {
        let p = ScaleParams::MinMax {
            min: vec![3.0],
            max: vec![3.0],
        };
        let z = apply_pointwise_scale(&p, &col(&[3.0, 7.0]), Direction::Forward).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
        let back = apply_pointwise_scale(&p, &z, Direction::Inverse).unwrap();
        assert_eq!(back.data(), &[3.0, 3.0]);
    }

    #[test]
    fn channel_count_must_match() {
        let p = ScaleParams::MinMax {
            min: vec![0.0, 0.0],
            max: vec![1.0, 1.0],
        };
        assert!(apply_pointwise_scale(&p, &col(&[1.0]), Direction::Forward).is_err());
    }
}
