//! Simulator for multi-package SGX platforms: platform establishment and
//! registration, attestation, the protected memory model and the
//! inter-package link, with adversaries at every trust boundary.

pub mod attestation;
pub mod codec;
pub mod crypto;
pub mod establishment;
pub mod harness;
pub mod link;
pub mod memory;
pub mod package;
pub mod registration;
