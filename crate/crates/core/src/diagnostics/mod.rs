//! Numerical checks of the error analysis: the per-iteration error ledger,
//! inequality reports for the energy, boundedness, Lipschitz and stability
//! estimates, and convergence-rate fits.

mod checks;
mod ledger;
mod report;
mod suite;

pub use checks::{
    discrete_gradient_norm, fit_convergence_rate, lemma1_energy_check, lemma2_lipschitz_check, lemma3_stability_check,
    pinsker_check, pinsker_suite, plateau_ratio, policy_gap_r, proposition1_check, proposition1_suite,
    residual_q_norm, Lemma2Reports, PinskerCheck,
};
pub use ledger::{ErrorLedger, LedgerRow, LEDGER_COLUMNS};
pub use report::{LemmaReport, LemmaRow};
pub use suite::{lemma1_cases, run_check, LemmaId};
