//! Sliding-window supervision over aligned series and the time-major
//! tabular flattening of windows.
//!
//! Indices follow the 1-based transformed grid. Window starts may be zero or
//! negative under warm start; rows before index 1 come from the pad policy.
//! Labels are only ever read from real indices.

use crate::error::{Error, Result};
use crate::model::{AlignedSeries, Matrix, SplitTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadPolicy {
    /// Rows before index 1 repeat row 1.
    #[default]
    ReplicateEdge,
    Zeros,
}

impl PadPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            PadPolicy::ReplicateEdge => "replicate-edge",
            PadPolicy::Zeros => "zeros",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "replicate-edge" => Some(Self::ReplicateEdge),
            "zeros" => Some(Self::Zeros),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    /// History length L_seq.
    pub seq_len: usize,
    pub stride: usize,
    /// Warm-start depth: how far windows may reach before index 1.
    pub warm_start: usize,
    /// Supervision offset past the window end.
    pub offset: usize,
    pub pred_len: usize,
    /// Multi-step overlap with the window; `None` for end-of-window labels.
    pub lbl_len: Option<usize>,
    pub pad_policy: PadPolicy,
}

impl WindowSpec {
    pub fn new(seq_len: usize, stride: usize) -> Self {
        Self {
            seq_len,
            stride,
            warm_start: 0,
            offset: 0,
            pred_len: 1,
            lbl_len: None,
            pad_policy: PadPolicy::ReplicateEdge,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("window spec: {m}")));
        if self.seq_len == 0 || self.stride == 0 || self.pred_len == 0 {
            return bad("L_seq, stride and pred_len must be >= 1".into());
        }
        if self.warm_start > self.seq_len - 1 + self.offset {
            return bad(format!(
                "warm start {} exceeds L_seq - 1 + offset = {}",
                self.warm_start,
                self.seq_len - 1 + self.offset
            ));
        }
        if let Some(l) = self.lbl_len {
            if l == 0 || l > self.seq_len {
                return bad(format!("lbl_len {l} must lie in [1, L_seq = {}]", self.seq_len));
            }
            if self.warm_start > self.seq_len - l + self.offset {
                return bad(format!(
                    "warm start {} exceeds L_seq - lbl_len + offset = {}",
                    self.warm_start,
                    self.seq_len - l + self.offset
                ));
            }
        }
        Ok(())
    }

    /// Right-side coverage L_req = L_seq + offset + pred_len.
    pub fn required_coverage(&self) -> usize {
        self.seq_len + self.offset + self.pred_len
    }

    /// Supervision index j_sup(k) = k + L_seq - 1 + offset.
    pub fn supervision_index(&self, k: i64) -> i64 {
        k + self.seq_len as i64 - 1 + self.offset as i64
    }

    fn first_start(&self) -> i64 {
        1 - self.warm_start as i64
    }

    fn is_admissible(&self, t_prime: usize, k: i64) -> bool {
        let first = self.first_start();
        k >= first && (k - first) % self.stride as i64 == 0 && k + self.required_coverage() as i64 - 1 <= t_prime as i64
    }
}

/// N = max(0, floor((T' - L_req + rho) / stride) + 1).
pub fn n_slices(t_prime: usize, spec: &WindowSpec) -> Result<usize> {
    spec.validate()?;
    let num = t_prime as i64 - spec.required_coverage() as i64 + spec.warm_start as i64;
    Ok(if num < 0 {
        0
    } else {
        (num / spec.stride as i64 + 1) as usize
    })
}

/// Admissible starts k_m = 1 - rho + (m - 1) stride for m = 1..=N.
pub fn admissible_starts(t_prime: usize, spec: &WindowSpec) -> Result<Vec<i64>> {
    let n = n_slices(t_prime, spec)?;
    let first = spec.first_start();
    Ok((0..n as i64).map(|m| first + m * spec.stride as i64).collect())
}

/// Read access to z~(j) for j >= 1 - rho.
#[derive(Debug, Clone, Copy)]
pub struct PaddedView<'a> {
    z: &'a Matrix,
    warm_start: usize,
    policy: PadPolicy,
}

impl<'a> PaddedView<'a> {
    pub fn new(z: &'a Matrix, warm_start: usize, policy: PadPolicy) -> Self {
        Self { z, warm_start, policy }
    }

    pub fn row(&self, j: i64) -> Result<Vec<f64>> {
        let lowest = 1 - self.warm_start as i64;
        if j < lowest || j > self.z.rows() as i64 {
            return Err(Error::Contract(format!(
                "index {j} outside [{lowest}, {}]",
                self.z.rows()
            )));
        }
        if j >= 1 {
            return Ok(self.z.row(j as usize - 1).to_vec());
        }
        Ok(match self.policy {
            PadPolicy::ReplicateEdge => self.z.row(0).to_vec(),
            PadPolicy::Zeros => vec![0.0; self.z.cols()],
        })
    }
}

/// Rows z~(k) .. z~(k + L_seq - 1).
pub fn extract_window(view: &PaddedView<'_>, k: i64, spec: &WindowSpec) -> Result<Matrix> {
    spec.validate()?;
    if !spec.is_admissible(view.z.rows(), k) {
        return Err(Error::Contract(format!("start {k} is not admissible")));
    }
    let mut data = Vec::with_capacity(spec.seq_len * view.z.cols());
    for j in k..k + spec.seq_len as i64 {
        data.extend(view.row(j)?);
    }
    Matrix::new(spec.seq_len, view.z.cols(), data)
}

/// End-of-window label z_y(j_sup(k)).
pub fn window_label(targets: &[f64], k: i64, spec: &WindowSpec) -> Result<f64> {
    spec.validate()?;
    if !spec.is_admissible(targets.len(), k) {
        return Err(Error::Contract(format!("start {k} is not admissible")));
    }
    Ok(targets[spec.supervision_index(k) as usize - 1])
}

/// Targets at k + L_seq - L_lbl + offset ..= k + L_seq + offset + L_pred - 1.
pub fn multistep_segment(targets: &[f64], k: i64, spec: &WindowSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let Some(lbl) = spec.lbl_len else {
        return Err(Error::Contract("multi-step segments need lbl_len".into()));
    };
    if !spec.is_admissible(targets.len(), k) {
        return Err(Error::Contract(format!("start {k} is not admissible")));
    }
    let (lo, hi) = segment_bounds(k, lbl, spec);
    Ok(targets[lo as usize - 1..hi as usize].to_vec())
}

fn segment_bounds(k: i64, lbl: usize, spec: &WindowSpec) -> (i64, i64) {
    let base = k + spec.seq_len as i64 + spec.offset as i64;
    (base - lbl as i64, base + spec.pred_len as i64 - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowLabel {
    Scalar(f64),
    Segment(Vec<f64>),
}

impl WindowLabel {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            WindowLabel::Scalar(v) => Some(*v),
            WindowLabel::Segment(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub unit_id: String,
    pub k: i64,
    pub window: Matrix,
    pub y: WindowLabel,
    pub j_sup: usize,
    pub split: SplitTag,
}

/// All windows of one unit, in start order.
pub fn slice_unit(series: &AlignedSeries, spec: &WindowSpec, split: SplitTag) -> Result<Vec<WindowSample>> {
    let starts = admissible_starts(series.len(), spec)?;
    let view = PaddedView::new(&series.features, spec.warm_start, spec.pad_policy);
    starts
        .into_iter()
        .map(|k| {
            let y = match spec.lbl_len {
                None => WindowLabel::Scalar(window_label(&series.targets, k, spec)?),
                Some(_) => WindowLabel::Segment(multistep_segment(&series.targets, k, spec)?),
            };
            Ok(WindowSample {
                unit_id: series.unit_id.clone(),
                k,
                window: extract_window(&view, k, spec)?,
                y,
                j_sup: spec.supervision_index(k) as usize,
                split,
            })
        })
        .collect()
}

/// A window flattened time-major: all channels of step 1, then step 2, ...
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSample {
    pub unit_id: String,
    pub k: i64,
    pub j_sup: usize,
    pub x: Vec<f64>,
    pub y: WindowLabel,
    pub split: SplitTag,
}

impl TabularSample {
    pub fn from_window(w: &WindowSample) -> Self {
        Self {
            unit_id: w.unit_id.clone(),
            k: w.k,
            j_sup: w.j_sup,
            x: tabularize(&w.window),
            y: w.y.clone(),
            split: w.split,
        }
    }
}

pub fn tabularize(window: &Matrix) -> Vec<f64> {
    window.data().to_vec()
}

/// Inverse of [`tabularize`] for a window of `seq_len` rows.
pub fn untabularize(x: &[f64], seq_len: usize, width: usize) -> Result<Matrix> {
    if seq_len * width != x.len() {
        return Err(Error::Shape(format!(
            "vector of length {} cannot be a {seq_len}x{width} window",
            x.len()
        )));
    }
    Matrix::new(seq_len, width, x.to_vec())
}
