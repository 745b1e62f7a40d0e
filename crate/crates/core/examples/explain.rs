//! Ask for a plain-language explanation of the first verifier error.
//!
//!     cargo run --example explain

use std::path::Path;
use std::sync::Arc;

use dafny_pilot::llm::{LlmClient, ProviderConfig};
use dafny_pilot::prompt::TaskKind;
use dafny_pilot::repair::{Engine, TextTaskInput};
use dafny_pilot::verifier::{DafnyVerifier, VerifierConfig};
use dafny_pilot::SourceText;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/text-tasks/explain");
    let engine = Engine::new(
        Arc::new(DafnyVerifier::new(VerifierConfig::replay(dir.join("fixtures")))?),
        Arc::new(LlmClient::new(ProviderConfig::replay(dir.join("cassettes")))?),
    );
    let text = SourceText::from_file(dir.join("Factor0.dfy"))?;
    let answer = engine.run_text_task(TaskKind::Explain, TextTaskInput::Explain { text, target: None }, 8000)?;
    println!("{answer}");
    Ok(())
}
