//! Lemma inference on the shipped CoincidenceCount case, fully replayed.
//!
//! The recorded answer proposes three helper lemmas plus the calls that
//! use them. Without axioms the lemmas stay unproven and the run is
//! Partial; with `allow_axioms` they become `{:axiom}` and the loop
//! invariant goes through.
//!
//!     cargo run --example lemma_inference

use std::path::Path;
use std::sync::Arc;

use dafny_pilot::llm::{LlmClient, ProviderConfig};
use dafny_pilot::prompt::TaskKind;
use dafny_pilot::repair::{Engine, LoopConfig};
use dafny_pilot::source::unified_diff;
use dafny_pilot::verifier::{DafnyVerifier, VerifierConfig};
use dafny_pilot::SourceText;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/cases/coincidence-count");
    let verifier = DafnyVerifier::new(VerifierConfig::replay(case.join("fixtures")))?;
    let text = SourceText::from_file(case.join("CoincidenceCount.dfy"))?;

    for allow_axioms in [false, true] {
        // replay cursors are per client, so each run gets a fresh one
        let llm = LlmClient::new(ProviderConfig::replay(case.join("cassettes")))?;
        let engine = Engine::new(Arc::new(DafnyVerifier::new(verifier.config().clone())?), Arc::new(llm));
        let cfg = LoopConfig { max_rounds: 1, allow_axioms, ..Default::default() };
        let outcome = engine.run_task(TaskKind::LemmaInference, &text, None, &cfg)?;

        println!("== allow_axioms = {allow_axioms}: {} after {} round(s)", outcome.label(), outcome.rounds_used());
        if let Some(proposed) = outcome.proposed_text() {
            println!("axioms inserted: {}", outcome.axioms_inserted(&text));
            print!("{}", unified_diff(text.path(), text.content(), proposed));
        }
    }
    Ok(())
}
