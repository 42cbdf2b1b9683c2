//! Pass/fail bookkeeping for the acceptance run.

use std::fmt;
use std::time::Duration;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub label: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.label,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Collects verdicts and decides the process exit status.
#[derive(Debug, Default)]
pub struct Ledger {
    pub verdicts: Vec<Verdict>,
}

impl Ledger {
    pub fn record(&mut self, v: Verdict) {
        println!("{v}");
        self.verdicts.push(v);
    }

    pub fn failures(&self) -> usize {
        self.verdicts.iter().filter(|v| !v.passed).count()
    }
}
