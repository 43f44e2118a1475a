use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{Matrix, RawUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradationShape {
    Linear,
    Exponential,
    /// Flat healthy plateau followed by linear wear.
    Piecewise,
}

impl DegradationShape {
    pub fn as_str(self) -> &'static str {
        match self {
            DegradationShape::Linear => "linear",
            DegradationShape::Exponential => "exponential",
            DegradationShape::Piecewise => "piecewise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Self::Linear),
            "exponential" => Some(Self::Exponential),
            "piecewise" => Some(Self::Piecewise),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    Prognostics,
    Diagnostics { classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_units: usize,
    /// Inclusive range of per-unit trajectory lengths.
    pub t_range: (usize, usize),
    pub channels: usize,
    pub shape: DegradationShape,
    pub noise_std: f64,
    pub seed: u64,
    pub task: SyntheticTask,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_units: 4,
            t_range: (30, 40),
            channels: 2,
            shape: DegradationShape::Linear,
            noise_std: 0.0,
            seed: 0,
            task: SyntheticTask::Prognostics,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::Spec("synthetic n_units must be >= 1".into()));
        }
        if self.t_range.0 < 2 || self.t_range.0 > self.t_range.1 {
            return Err(Error::Spec(format!(
                "synthetic T range [{}, {}] must satisfy 2 <= min <= max",
                self.t_range.0, self.t_range.1
            )));
        }
        if self.channels == 0 {
            return Err(Error::Spec("synthetic channels must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Spec("synthetic noise_std must be finite and >= 0".into()));
        }
        if let SyntheticTask::Diagnostics { classes } = self.task {
            if classes == 0 {
                return Err(Error::Spec("diagnostics needs at least one class".into()));
            }
        }
        Ok(())
    }
}

/// Generates run-to-failure units. Channel profiles are shared by all units so
/// that the mapping from features to target is the same across the fleet;
/// unit lengths vary within `t_range`. Output is a pure function of the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<RawUnit>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let profiles: Vec<(f64, f64)> = (0..spec.channels)
        .map(|_| {
            let base = rng.random_range(-1.0..1.0);
            let magnitude = rng.random_range(0.5..1.5);
            let slope = if rng.random_bool(0.5) { magnitude } else { -magnitude };
            (base, slope)
        })
        .collect();
    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.noise_std).map_err(|e| Error::Spec(e.to_string()))?)
    } else {
        None
    };
    let width = (spec.n_units.max(1) - 1).to_string().len().max(3);
    let (t_min, t_max) = spec.t_range;
    let exp_scale = (t_max as f64 / 4.0).max(1.0);
    let knee = (t_min as f64 / 2.0).max(1.0);

    let mut units = Vec::with_capacity(spec.n_units);
    for u in 0..spec.n_units {
        let t_len = rng.random_range(t_min..=t_max);
        let mut data = Vec::with_capacity(t_len * spec.channels);
        let mut target = Vec::with_capacity(t_len);
        for t in 1..=t_len {
            let rul = (t_len - t) as f64;
            let driver = match spec.task {
                SyntheticTask::Prognostics => {
                    target.push(rul);
                    match spec.shape {
                        DegradationShape::Linear => rul,
                        DegradationShape::Exponential => (-rul / exp_scale).exp(),
                        DegradationShape::Piecewise => rul.min(knee),
                    }
                }
                SyntheticTask::Diagnostics { classes } => {
                    let class = (classes * (t - 1)) / t_len;
                    target.push(class as f64);
                    class as f64
                }
            };
            for (base, slope) in &profiles {
                let mut v = base + slope * driver;
                if let Some(n) = &noise {
                    v += n.sample(&mut rng);
                }
                data.push(v);
            }
        }
        let features = Matrix::new(t_len, spec.channels, data)?;
        let names = (0..spec.channels).map(|c| format!("s{c}")).collect();
        let unit = RawUnit::new(format!("unit_{u:0width$}"), features, target, names)?
            .with_metadata("lifetime", t_len.to_string())
            .with_metadata("dataset_id", "synthetic");
        units.push(unit);
    }
    Ok(units)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_target_is_remaining_life() {
        let spec = SyntheticSpec {
            n_units: 1,
            t_range: (5, 5),
            ..SyntheticSpec::default()
        };
        let units = generate_synthetic(&spec).unwrap();
        assert_eq!(units[0].target, vec![4.0, 3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn identical_specs_give_identical_units() {
        let spec = SyntheticSpec {
            noise_std: 0.3,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.features.bit_eq(&y.features));
            assert_eq!(x.target, y.target);
        }
    }

    #[test]
    fn diagnostics_classes_are_in_range_and_piecewise_constant() {
        let spec = SyntheticSpec {
            task: SyntheticTask::Diagnostics { classes: 3 },
            ..SyntheticSpec::default()
        };
        for unit in generate_synthetic(&spec).unwrap() {
            assert!(unit.target.iter().all(|c| (0.0..3.0).contains(c) && c.fract() == 0.0));
            assert!(unit.target.windows(2).all(|w| w[1] >= w[0]));
            assert_eq!(unit.target[0], 0.0);
            assert_eq!(*unit.target.last().unwrap(), 2.0);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_len = SyntheticSpec {
            t_range: (1, 4),
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad_len).is_err());
        let bad_noise = SyntheticSpec {
            noise_std: -1.0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad_noise).is_err());
    }
}
