//! Closes the loop between a language model and the Dafny verifier.
//!
//! The engine finds a failing proof obligation, marks it in the source,
//! asks a model for lemmas, proofs or repairs, turns the answer into
//! span-safe patches, checks them with the verifier and feeds the new
//! diagnostics back until the program verifies or the round budget runs
//! out. Model traffic can be recorded into cassettes and replayed, and
//! verifier results into fixtures, so whole runs are reproducible offline.
//!
//! Modules, bottom-up:
//!
//! - [`source`]: positioned text, patches, error markers, declaration scan
//! - [`verifier`]: the Dafny adapter (subprocess, replay, record)
//! - [`prompt`]: task templates and token budgeting
//! - [`llm`]: chat-completion client with cassettes
//! - [`suggestion`]: candidates from model output, precheck, axioms
//! - [`repair`]: the feedback loop and its repair heuristics
//! - [`bench`]: corpus manifests and reports
//! - [`service`]: local HTTP API for interactive sessions
//! - [`cli`]: the `dafny-pilot` command line

pub mod bench;
pub mod cli;
mod lex;
pub mod llm;
pub mod prompt;
pub mod repair;
pub mod runlog;
pub mod service;
pub mod source;
pub mod suggestion;
pub mod verifier;

use std::io::Write;
use std::path::Path;

pub use source::{apply_patch, ContentHash, DeclarationInfo, Edit, Patch, SourceText, Span};
pub use verifier::{Diagnostic, DiagnosticCategory, VerificationResult, VerificationStatus, Verifier};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `data` to a temporary file next to `path`, then renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, data: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(data)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
