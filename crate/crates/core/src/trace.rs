use crate::model::ControlParams;

/// N-agent evaluation of one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEval {
    pub n: usize,
    pub cost: f64,
    /// `(C^N(theta) - C^{*,N}) / C^{*,N}`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub theta: ControlParams,
    /// Exact mean-field cost `C(theta)`; NaN on iterations skipped by the
    /// evaluation stride.
    pub cost: f64,
    /// `(C(theta) - C*) / C*`, NaN when `C*` is unavailable or skipped.
    pub rel_error_mf: f64,
    pub population: Vec<PopulationEval>,
    /// Frobenius norm of the gradient (estimate) used to leave this iterate;
    /// NaN on the final record.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceMeta {
    pub method: String,
    pub optimizer: String,
    pub seed: u64,
    pub reference_cost: Option<f64>,
    pub notes: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    pub meta: TraceMeta,
}

impl ConvergenceTrace {
    pub fn new(meta: TraceMeta) -> Self {
        ConvergenceTrace {
            records: Vec::new(),
            meta,
        }
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    pub fn rel_errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rel_error_mf).collect()
    }

    /// Number of update steps taken.
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}
