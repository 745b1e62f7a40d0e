//! Proof inference for `Factor0`: the model's proof only verifies after
//! the failing calc hints are commented out and the `:=` witnesses are
//! rewritten into `:|` bindings.
//!
//!     cargo run --example proof_inference

use std::path::Path;
use std::sync::Arc;

use dafny_pilot::llm::{LlmClient, ProviderConfig};
use dafny_pilot::prompt::TaskKind;
use dafny_pilot::repair::{Engine, LoopConfig, Outcome};
use dafny_pilot::runlog::RunLog;
use dafny_pilot::verifier::{DafnyVerifier, VerifierConfig};
use dafny_pilot::SourceText;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/cases/factor0");
    let log = Arc::new(RunLog::new());
    let engine = Engine::new(
        Arc::new(DafnyVerifier::new(VerifierConfig::replay(case.join("fixtures")))?),
        Arc::new(LlmClient::new(ProviderConfig::replay(case.join("cassettes")))?),
    )
    .with_log(log.clone());

    let text = SourceText::from_file(case.join("Factor0.dfy"))?;
    let outcome = engine.run_task(TaskKind::ProofInference, &text, None, &LoopConfig { max_rounds: 1, ..Default::default() })?;

    let Outcome::Success { final_text, attempts, .. } = &outcome else {
        return Err(format!("expected success, got {}", outcome.label()).into());
    };
    for a in attempts {
        println!("round {}: heuristics {:?}, {} residual error(s)", a.round, a.heuristics_applied, a.residual_errors);
    }
    println!("\n{final_text}");

    println!("run log:");
    for e in log.events() {
        println!("  #{:<3} {:?}: {}", e.seq, e.action, e.summary);
    }
    Ok(())
}
