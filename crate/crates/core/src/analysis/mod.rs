//! Runtime monitors for the stability and rate certificates, plus the probes
//! used by the experiments.

mod lyapunov;
mod probes;
mod rates;

use serde::{Deserialize, Serialize};

use crate::state::HybridTime;

pub use lyapunov::{
    check_jump_identities, check_monotonicity, flow_decrease_rate, hand1_jump_change,
    hand2_jump_bound, hand2_jump_change, jump_change, lyapunov, JumpIdentityReport,
};
pub use probes::{
    bisect_margin, fit_order, hand1_phase_probe, hand1_phase_runs, order_study,
    regularity_constant, restart_runs, restart_sweep, robustness_margin, robustness_run,
    robustness_trial, uniformity_probe, uniformity_runs, MarginReport, OrderSample, ProbeRow,
    ProbeSettings, RestartSample, RobustnessSettings,
};
pub use rates::{
    beta_constant, beta_for_trace, check_thm1_rate, check_thm1_rate_t, check_thm2_rate,
    default_tolerance, flow_gain_constant, k0_constant, k1_constant, lemma1_time_estimate,
    optimal_restart, period_contractions, period_contractions_above, thm2_constants,
    time_to_epsilon, time_to_epsilon_period_ends, Thm2Constants,
};

/// Most violation times kept in a report; the count is always exact.
const MAX_VIOLATION_TIMES: usize = 1000;

/// Outcome of checking `bound - value >= -tolerance` along a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub satisfied: bool,
    /// Smallest signed slack `bound - value` seen (`+inf` if nothing was checked).
    pub worst_margin: f64,
    pub violation_times: Vec<HybridTime>,
    pub violations: usize,
    /// `(time, bound)` at every checked sample.
    pub bound_curve: Vec<(HybridTime, f64)>,
    pub tolerance: f64,
    pub checked: usize,
}

impl RateReport {
    pub fn new(tolerance: f64) -> Self {
        Self {
            satisfied: true,
            worst_margin: f64::INFINITY,
            violation_times: Vec::new(),
            violations: 0,
            bound_curve: Vec::new(),
            tolerance,
            checked: 0,
        }
    }

    pub fn push_bound(&mut self, time: HybridTime, bound: f64) {
        self.bound_curve.push((time, bound));
    }

    /// Records one signed margin. NaN counts as a violation.
    pub fn record(&mut self, time: HybridTime, margin: f64) {
        self.checked += 1;
        if margin.is_nan() {
            self.worst_margin = f64::NAN;
        } else if !self.worst_margin.is_nan() {
            self.worst_margin = self.worst_margin.min(margin);
        }
        if !(margin >= -self.tolerance) {
            self.satisfied = false;
            self.violations += 1;
            if self.violation_times.len() < MAX_VIOLATION_TIMES {
                self.violation_times.push(time);
            }
        }
    }

    /// Same report without the bound curve (for compact summaries).
    pub fn without_curve(mut self) -> Self {
        self.bound_curve.clear();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_tracks_worst_margin() {
        let mut r = RateReport::new(0.1);
        r.record(HybridTime::new(0.0, 0), 1.0);
        r.record(HybridTime::new(1.0, 0), -0.05);
        assert!(r.satisfied);
        assert_eq!(r.worst_margin, -0.05);
        r.record(HybridTime::new(2.0, 0), -0.2);
        assert!(!r.satisfied);
        assert_eq!(r.violations, 1);
        assert_eq!(r.violation_times, vec![HybridTime::new(2.0, 0)]);
    }
}
