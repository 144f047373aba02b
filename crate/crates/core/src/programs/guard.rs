//! Guard predicates over telemetry.

use serde::{Deserialize, Serialize};

/// Telemetry visible to guards and to the meta-policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaObservation {
    pub s_overall: f64,
    pub e_radius: f64,
    pub sigma_height: f64,
    /// Fraction of neighbor reports flagged inconsistent this frame.
    pub infected_report_rate: f64,
    /// Minimum of `infected_report_rate` over the recent hysteresis window.
    pub infected_report_rate_sustained: f64,
    pub frames_since_adaptation: u64,
}

impl Default for MetaObservation {
    fn default() -> Self {
        Self {
            s_overall: 100.0,
            e_radius: 0.0,
            sigma_height: 0.0,
            infected_report_rate: 0.0,
            infected_report_rate_sustained: 0.0,
            frames_since_adaptation: 0,
        }
    }
}

impl MetaObservation {
    pub fn is_valid(&self) -> bool {
        let finite = [self.s_overall, self.e_radius, self.sigma_height]
            .iter()
            .all(|v| v.is_finite());
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        finite && rate(self.infected_report_rate) && rate(self.infected_report_rate_sustained)
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::SOverall => self.s_overall,
            Metric::ERadius => self.e_radius,
            Metric::SigmaHeight => self.sigma_height,
            Metric::InfectedReportRate => self.infected_report_rate,
            Metric::InfectedReportRateSustained => self.infected_report_rate_sustained,
            Metric::FramesSinceAdaptation => self.frames_since_adaptation as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SOverall,
    ERadius,
    SigmaHeight,
    InfectedReportRate,
    InfectedReportRateSustained,
    FramesSinceAdaptation,
}

impl Metric {
    /// Score-type metrics carry physical or score units; the rest are rates or counters.
    pub fn is_score_type(self) -> bool {
        matches!(self, Metric::SOverall | Metric::ERadius | Metric::SigmaHeight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: Metric,
    pub op: CmpOp,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Const(bool),
    Cmp(Comparison),
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn cmp(metric: Metric, op: CmpOp, value: f64) -> Self {
        Predicate::Cmp(Comparison { metric, op, value })
    }

    pub fn eval(&self, obs: &MetaObservation) -> bool {
        match self {
            Predicate::Const(b) => *b,
            Predicate::Cmp(c) => {
                let v = obs.metric(c.metric);
                match c.op {
                    CmpOp::Lt => v < c.value,
                    CmpOp::Le => v <= c.value,
                    CmpOp::Gt => v > c.value,
                    CmpOp::Ge => v >= c.value,
                }
            }
            Predicate::All(ps) => ps.iter().all(|p| p.eval(obs)),
            Predicate::Any(ps) => ps.iter().any(|p| p.eval(obs)),
            Predicate::Not(p) => !p.eval(obs),
        }
    }

    /// Every metric referenced anywhere in the predicate.
    pub fn metrics(&self) -> Vec<Metric> {
        let mut out = Vec::new();
        self.collect_metrics(&mut out);
        out
    }

    fn collect_metrics(&self, out: &mut Vec<Metric>) {
        match self {
            Predicate::Const(_) => {}
            Predicate::Cmp(c) => out.push(c.metric),
            Predicate::All(ps) | Predicate::Any(ps) => ps.iter().for_each(|p| p.collect_metrics(out)),
            Predicate::Not(p) => p.collect_metrics(out),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Predicate::Const(_) => true,
            Predicate::Cmp(c) => c.value.is_finite(),
            Predicate::All(ps) | Predicate::Any(ps) => ps.iter().all(Predicate::is_finite),
            Predicate::Not(p) => p.is_finite(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinators() {
        let obs = MetaObservation {
            s_overall: 40.0,
            infected_report_rate: 0.4,
            ..Default::default()
        };
        let low = Predicate::cmp(Metric::SOverall, CmpOp::Lt, 60.0);
        let adv = Predicate::cmp(Metric::InfectedReportRate, CmpOp::Gt, 0.5);
        assert!(low.eval(&obs));
        assert!(!adv.eval(&obs));
        assert!(Predicate::Any(vec![low.clone(), adv.clone()]).eval(&obs));
        assert!(!Predicate::All(vec![low.clone(), adv.clone()]).eval(&obs));
        assert!(Predicate::Not(Box::new(adv)).eval(&obs));
    }

    #[test]
    fn json_shape() {
        let p = Predicate::cmp(Metric::InfectedReportRateSustained, CmpOp::Gt, 0.15);
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(
            text,
            r#"{"cmp":{"metric":"infected_report_rate_sustained","op":">","value":0.15}}"#
        );
        let back: Predicate = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }
}
