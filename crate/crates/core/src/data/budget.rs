use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::ClassCount;

/// Slack for comparing real-valued bit totals that should agree exactly.
fn slack(total: f64) -> f64 {
    1e-9 * total.abs().max(1.0)
}

/// Supervision-bit ledger. Full labels cost `log2 C` bits, queries one bit.
///
/// Spent bits are derived from the action counts rather than accumulated, so
/// `spent_bits == n_full * log2 C + n_queries` holds exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitBudget {
    total_bits: f64,
    cost_full: f64,
    cost_query: f64,
    n_full: usize,
    n_queries: usize,
}

impl BitBudget {
    pub fn new(total_bits: f64, classes: ClassCount) -> Result<Self> {
        if !(total_bits >= 0.0 && total_bits.is_finite()) {
            return Err(Error::Budget(format!("total bits must be finite and non-negative, got {total_bits}")));
        }
        Ok(Self {
            total_bits,
            cost_full: classes.log2(),
            cost_query: 1.0,
            n_full: 0,
            n_queries: 0,
        })
    }

    pub fn total_bits(&self) -> f64 {
        self.total_bits
    }

    pub fn spent_bits(&self) -> f64 {
        self.n_full as f64 * self.cost_full + self.n_queries as f64 * self.cost_query
    }

    pub fn remaining_bits(&self) -> f64 {
        (self.total_bits - self.spent_bits()).max(0.0)
    }

    pub fn cost_full(&self) -> f64 {
        self.cost_full
    }

    pub fn cost_query(&self) -> f64 {
        self.cost_query
    }

    pub fn n_full(&self) -> usize {
        self.n_full
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    /// Whole queries that still fit in the budget.
    pub fn remaining_queries(&self) -> usize {
        let remaining = self.total_bits - self.spent_bits();
        (remaining + slack(self.total_bits)).max(0.0).floor() as usize
    }

    pub fn charge_full(&mut self, n: usize) -> Result<()> {
        let after = (self.n_full + n) as f64 * self.cost_full + self.n_queries as f64 * self.cost_query;
        if after > self.total_bits + slack(self.total_bits) {
            return Err(Error::Budget(format!(
                "{n} full labels need {:.4} bits but only {:.4} remain",
                n as f64 * self.cost_full,
                self.remaining_bits()
            )));
        }
        self.n_full += n;
        Ok(())
    }

    pub fn charge_queries(&mut self, n: usize) -> Result<()> {
        if n > self.remaining_queries() {
            return Err(Error::Quota(format!(
                "{n} queries requested but only {} fit in the remaining {:.4} bits",
                self.remaining_queries(),
                self.remaining_bits()
            )));
        }
        self.n_queries += n;
        Ok(())
    }
}

/// How a fractional query allowance is turned into a query count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuotaRounding {
    /// Never exceed the budget.
    Floor,
    /// Round to the nearest multiple, possibly overshooting the budget.
    NearestMultiple(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BudgetPlan {
    pub total_bits: f64,
    pub n_full: usize,
    pub n_queries: usize,
    /// Bits the plan actually consumes.
    pub planned_bits: f64,
}

impl BudgetPlan {
    pub fn overshoot(&self) -> f64 {
        self.planned_bits - self.total_bits
    }
}

/// Splits `total_bits` into `n_full` full labels plus as many queries as fit.
pub fn plan_budget(total_bits: f64, classes: ClassCount, n_full: usize, rounding: QuotaRounding) -> Result<BudgetPlan> {
    let full_bits = n_full as f64 * classes.log2();
    if full_bits > total_bits + slack(total_bits) {
        return Err(Error::Budget(format!(
            "{n_full} full labels cost {full_bits:.4} bits, more than the {total_bits:.4} available"
        )));
    }
    let remaining = (total_bits - full_bits).max(0.0);
    let n_queries = match rounding {
        QuotaRounding::Floor => (remaining + slack(total_bits)).floor() as usize,
        QuotaRounding::NearestMultiple(0) => {
            return Err(Error::Budget("rounding multiple must be positive".into()));
        }
        QuotaRounding::NearestMultiple(m) => ((remaining / m as f64).round() as u64 * m) as usize,
    };
    Ok(BudgetPlan {
        total_bits,
        n_full,
        n_queries,
        planned_bits: full_bits + n_queries as f64,
    })
}
