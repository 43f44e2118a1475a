use crate::error::{Error, Result};
use crate::model::{Matrix, Series, Support, SupportMap};

/// Keeps indices 1, 1+r, 1+2r, ...; local supports are the kept indices.
pub fn apply_subsample(rate: usize, x: &Matrix) -> Result<(Matrix, SupportMap)> {
    if rate == 0 {
        return Err(Error::Spec("subsample rate must be >= 1".into()));
    }
    let kept: Vec<usize> = (0..x.rows()).step_by(rate).collect();
    let support = SupportMap::new(kept.iter().map(|i| Support::Point(i + 1)).collect());
    Ok((x.select_rows(&kept), support))
}

/// Channel-axis fusion of series that share one grid.
pub fn apply_concatenate(inputs: &[&Series]) -> Result<Series> {
    let Some(first) = inputs.first() else {
        return Err(Error::Spec("concatenate needs at least one input".into()));
    };
    for (i, s) in inputs.iter().enumerate().skip(1) {
        if s.support != first.support {
            return Err(Error::Alignment(format!(
                "concatenate input {} has a different support than input 0",
                i
            )));
        }
    }
    let rows = first.len();
    let width: usize = inputs.iter().map(|s| s.values.cols()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for t in 0..rows {
        for s in inputs {
            data.extend_from_slice(s.values.row(t));
        }
    }
    Series::new(Matrix::new(rows, width, data)?, first.support.clone())
}

/// Appends rows of `value` up to `length`; the padded rows are artificial.
pub fn apply_pad_to_length(length: usize, value: f64, x: &Matrix) -> Result<(Matrix, SupportMap)> {
    if length < x.rows() {
        return Err(Error::Shape(format!(
            "cannot pad a series of length {} to {length}",
            x.rows()
        )));
    }
    let mut data = x.data().to_vec();
    data.resize(length * x.cols(), value);
    let mut support: Vec<Support> = (1..=x.rows()).map(Support::Point).collect();
    support.resize(length, Support::Artificial);
    Ok((Matrix::new(length, x.cols(), data)?, SupportMap::new(support)))
}

pub fn apply_select_channels(channels: &[usize], x: &Matrix) -> Result<Matrix> {
    if let Some(bad) = channels.iter().find(|c| **c >= x.cols()) {
        return Err(Error::Shape(format!(
            "channel {bad} out of range for {} channels",
            x.cols()
        )));
    }
    let columns: Vec<Vec<f64>> = channels.iter().map(|c| x.column(*c)).collect();
    let mut out = Matrix::from_columns(&columns)?;
    if x.rows() == 0 {
        out = Matrix::zeros(0, channels.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_keeps_every_rth() {
        let x = Matrix::column_vector(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let (z, s) = apply_subsample(2, &x).unwrap();
        assert_eq!(z.data(), &[1.0, 3.0, 5.0]);
        assert_eq!(s.entries(), &[Support::Point(1), Support::Point(3), Support::Point(5)]);
    }

    #[test]
    fn concatenate_widens_and_keeps_support() {
        let a = Series::raw(Matrix::column_vector(vec![1.0, 2.0, 3.0, 4.0]));
        let b = Series::raw(Matrix::column_vector(vec![5.0, 6.0, 7.0, 8.0]));
        let z = apply_concatenate(&[&a, &b]).unwrap();
        assert_eq!(z.values.cols(), 2);
        assert_eq!(z.values.row(1), &[2.0, 6.0]);
        assert_eq!(z.support, a.support);
        let short = Series::raw(Matrix::column_vector(vec![1.0; 3]));
        assert!(matches!(apply_concatenate(&[&a, &short]), Err(Error::Alignment(_))));
    }

    #[test]
    fn padding_marks_rows_artificial() {
        let (z, s) = apply_pad_to_length(4, -1.0, &Matrix::column_vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(z.data(), &[1.0, 2.0, -1.0, -1.0]);
        assert_eq!(s.entries()[2], Support::Artificial);
        assert!(apply_pad_to_length(1, 0.0, &z).is_err());
    }

    #[test]
    fn select_reorders_channels() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(apply_select_channels(&[2, 0], &x).unwrap().data(), &[3.0, 1.0]);
        assert!(apply_select_channels(&[3], &x).is_err());
    }
}
