pub mod apc;
pub mod diagnose;
pub mod fit;
pub mod ppc;
pub mod serial;
pub mod simulate;
pub mod viterbi;
