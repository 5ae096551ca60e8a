//! Reverse reconciliation at low SNR.

pub mod ldpc;
pub mod mdr;
pub mod session;

pub use ldpc::{adapt_rate, capacity, ldpc_decode, DecoderConfig, DecoderKind, LdpcCode, MetParams, ParityCheck};
pub use mdr::{mdr_apply, mdr_encode, MdrFrame};
pub use session::{reconcile, reconcile_bench, write_recon_reports, BenchConfig, ReconConfig, ReconReport};
