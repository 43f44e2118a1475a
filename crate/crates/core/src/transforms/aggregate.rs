use super::{mean_std, AggregationRule};
use crate::model::{Matrix, SupportMap};

/// Interior sliding pooling: window j covers raw indices
/// [(j-1)s+1, (j-1)s+w]; inputs shorter than `w` yield an empty grid.
pub fn apply_windowed_aggregation(
    rule: AggregationRule,
    window: usize,
    stride: usize,
    x: &Matrix,
) -> (Matrix, SupportMap) {
    let support = SupportMap::sliding(x.rows(), window, stride);
    let mut out = Matrix::zeros(support.len(), x.cols());
    for j in 0..support.len() {
        let start = j * stride;
        for c in 0..x.cols() {
            let vals: Vec<f64> = (start..start + window).map(|t| x.get(t, c)).collect();
            out.set(j, c, pool(rule, &vals));
        }
    }
    (out, support)
}

fn pool(rule: AggregationRule, vals: &[f64]) -> f64 {
    match rule {
        AggregationRule::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
        AggregationRule::Sum => vals.iter().sum(),
        AggregationRule::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
        AggregationRule::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggregationRule::Median => {
            let mut sorted = vals.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            }
        }
        AggregationRule::Std => mean_std(vals).1,
        AggregationRule::First => vals[0],
        AggregationRule::Last => vals[vals.len() - 1],
    }
}

/// Running sum of squares along time, per channel.
pub fn apply_cumsum_squared(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for c in 0..x.cols() {
        let mut acc = 0.0;
        for t in 0..x.rows() {
            let v = x.get(t, c);
            acc += v * v;
            out.set(t, c, acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Support;

    fn ramp(n: usize) -> Matrix {
        Matrix::column_vector((1..=n).map(|v| v as f64).collect())
    }

    #[test]
    fn fifteen_step_example() {
        let (z, s) = apply_windowed_aggregation(AggregationRule::Mean, 4, 3, &ramp(15));
        assert_eq!(z.data(), &[2.5, 5.5, 8.5, 11.5]);
        let spans: Vec<_> = s.entries().iter().map(|e| e.bounds().unwrap()).collect();
        assert_eq!(spans, vec![(1, 4), (4, 7), (7, 10), (10, 13)]);
    }

    #[test]
    fn short_input_gives_empty_grid() {
        let (z, s) = apply_windowed_aggregation(AggregationRule::Max, 4, 1, &ramp(3));
        assert_eq!(z.rows(), 0);
        assert!(s.is_empty());
    }

    #[test]
    fn rules_on_one_window() {
        let x = Matrix::column_vector(vec![4.0, 1.0, 3.0, 2.0]);
        let one = |r| apply_windowed_aggregation(r, 4, 1, &x).0.data()[0];
        assert_eq!(one(AggregationRule::Sum), 10.0);
        assert_eq!(one(AggregationRule::Min), 1.0);
        assert_eq!(one(AggregationRule::Max), 4.0);
        assert_eq!(one(AggregationRule::Median), 2.5);
        assert_eq!(one(AggregationRule::First), 4.0);
        assert_eq!(one(AggregationRule::Last), 2.0);
        assert!((one(AggregationRule::Std) - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(
            apply_windowed_aggregation(AggregationRule::Mean, 2, 2, &x).1.entries()[1],
            Support::Span { lo: 3, hi: 4 }
        );
    }

    #[test]
    fn cumsum_of_squares() {
        let z = apply_cumsum_squared(&ramp(3));
        assert_eq!(z.data(), &[1.0, 5.0, 14.0]);
    }
}
