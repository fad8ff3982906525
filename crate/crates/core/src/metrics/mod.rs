//! Cost accounting, utility/effectiveness evaluation and complexity checks.

mod complexity;
mod eval;
mod ledger;

pub use complexity::{complexity_assertions, Check, Factor, RunSummary};
pub use eval::{
    accuracy_of, baseline_client_macs, effectiveness_report, evaluate_client, evaluate_dataset, utility_report,
    ClientEval, EvalReport, GoalAudit, GoalCheck, GoalStatus, OracleComparison, UTILITY_TOLERANCE,
};
pub use ledger::{ComputeRecord, CostLedger, LedgerRecords, LinkRecord, PartyCounters, Phase};
