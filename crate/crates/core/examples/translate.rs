//! Turn an English requirement into a Dafny signature with a contract.
//! The answer is resolved (not verified) before it is returned.
//!
//!     cargo run --example translate

use std::path::Path;
use std::sync::Arc;

use dafny_pilot::llm::{LlmClient, ProviderConfig};
use dafny_pilot::prompt::TaskKind;
use dafny_pilot::repair::{Engine, TextTaskInput};
use dafny_pilot::verifier::{DafnyVerifier, VerifierConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/text-tasks/translate");
    let engine = Engine::new(
        Arc::new(DafnyVerifier::new(VerifierConfig::replay(dir.join("fixtures")))?),
        Arc::new(LlmClient::new(ProviderConfig::replay(dir.join("cassettes")))?),
    );
    let requirement = std::fs::read_to_string(dir.join("requirement.txt"))?;
    println!("requirement: {}", requirement.trim());
    let spec = engine.run_text_task(TaskKind::Nl2Spec, TextTaskInput::Nl2Spec { requirement }, 8000)?;
    println!("\n{spec}");
    Ok(())
}
