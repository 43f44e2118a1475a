//! Remaining discharge throughput (ah-RUL) targets for battery cells.
//!
//! Q_acc(n) accumulates the per-cycle discharge integral normalized by the
//! nominal capacity; the target at cycle n is Q_acc(n_EoL) - Q_acc(n), held at
//! zero from the end-of-life cycle onwards.

use crate::error::{Error, Result};
use crate::model::RawUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignConvention {
    /// Discharge current is recorded as positive.
    PositiveDischarge,
    /// Discharge current is recorded as negative and is flipped first.
    NegativeDischarge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EolRule {
    /// End of life is the last recorded cycle.
    LastCycle,
    /// End of life is the first cycle whose capacity drops below the value.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AhRulSpec {
    /// Nominal capacity in Ah; must be positive.
    pub q_nom: f64,
    pub current_channel: String,
    pub sign_convention: SignConvention,
    pub eol_rule: EolRule,
}

/// Within-cycle samples of one charge/discharge cycle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CycleProfile {
    pub time: Vec<f64>,
    pub current: Vec<f64>,
    /// Measured capacity for the cycle, needed by the threshold rule.
    pub capacity: Option<f64>,
}

impl CycleProfile {
    /// Trapezoidal integral of the discharge part of the current.
    fn discharge_integral(&self, sign: SignConvention) -> Result<f64> {
        if self.time.len() != self.current.len() {
            return Err(Error::Shape(format!(
                "cycle has {} time stamps but {} current samples",
                self.time.len(),
                self.current.len()
            )));
        }
        let flip = match sign {
            SignConvention::PositiveDischarge => 1.0,
            SignConvention::NegativeDischarge => -1.0,
        };
        let discharge = |i: usize| (flip * self.current[i]).max(0.0);
        let mut total = 0.0;
        for i in 1..self.time.len() {
            let dt = self.time[i] - self.time[i - 1];
            total += 0.5 * (discharge(i - 1) + discharge(i)) * dt;
        }
        Ok(total)
    }
}

/// Per-cycle ah-RUL, one value per entry of `cycles`.
pub fn construct_ah_rul_cycles(cycles: &[CycleProfile], spec: &AhRulSpec) -> Result<Vec<f64>> {
    if !(spec.q_nom > 0.0 && spec.q_nom.is_finite()) {
        return Err(Error::Spec(format!("nominal capacity must be > 0, got {}", spec.q_nom)));
    }
    if cycles.is_empty() {
        return Err(Error::Resolution("no cycles to resolve end of life from".into()));
    }
    let eol = match spec.eol_rule {
        EolRule::LastCycle => cycles.len() - 1,
        EolRule::Threshold(limit) => cycles
            .iter()
            .position(|c| c.capacity.is_some_and(|q| q < limit))
            .ok_or_else(|| Error::Resolution(format!("capacity never drops below threshold {limit}")))?,
    };
    let mut acc = Vec::with_capacity(cycles.len());
    let mut running = 0.0;
    for cycle in cycles {
        running += cycle.discharge_integral(spec.sign_convention)? / spec.q_nom;
        acc.push(running);
    }
    let at_eol = acc[eol];
    Ok(acc
        .iter()
        .enumerate()
        .map(|(n, q)| if n >= eol { 0.0 } else { at_eol - q })
        .collect())
}

/// Row-level ah-RUL for a unit whose rows are within-cycle samples.
///
/// The unit needs a `cycle` channel (non-decreasing cycle number), a `time`
/// channel and the configured current channel; the threshold rule also reads
/// a `capacity` channel (last sample of each cycle). Every row receives its
/// cycle's value, so the output has one entry per row.
pub fn construct_ah_rul(unit: &RawUnit, spec: &AhRulSpec) -> Result<Vec<f64>> {
    let channel = |name: &str| {
        unit.channel_index(name)
            .ok_or_else(|| Error::Schema(format!("unit {} has no `{name}` channel", unit.unit_id)))
    };
    let cycle_col = channel("cycle")?;
    let time_col = channel("time")?;
    let current_col = channel(&spec.current_channel)?;
    let capacity_col = match spec.eol_rule {
        EolRule::Threshold(_) => Some(channel("capacity")?),
        EolRule::LastCycle => None,
    };

    let mut cycles: Vec<CycleProfile> = Vec::new();
    let mut row_cycle = Vec::with_capacity(unit.len());
    let mut current_id: Option<f64> = None;
    for row in unit.features.iter_rows() {
        let id = row[cycle_col];
        match current_id {
            Some(prev) if id < prev => {
                return Err(Error::Integrity(format!(
                    "unit {}: cycle numbers must be non-decreasing",
                    unit.unit_id
                )))
            }
            Some(prev) if id == prev => {}
            _ => {
                cycles.push(CycleProfile::default());
                current_id = Some(id);
            }
        }
        let cycle = cycles.last_mut().expect("cycle pushed above");
        cycle.time.push(row[time_col]);
        cycle.current.push(row[current_col]);
        if let Some(c) = capacity_col {
            cycle.capacity = Some(row[c]);
        }
        row_cycle.push(cycles.len() - 1);
    }
    let per_cycle = construct_ah_rul_cycles(&cycles, spec)?;
    Ok(row_cycle.into_iter().map(|c| per_cycle[c]).collect())
}
