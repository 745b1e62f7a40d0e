//! The session service over the CoincidenceCount replay data, with the
//! bundled web page at http://127.0.0.1:8765/ui/.
//!
//!     cargo run --example serve
//!
//! Then, for example:
//!
//!     curl -s localhost:8765/v1/sessions -d "{\"task\":\"LemmaInference\",\"path\":\"CoincidenceCount.dfy\",
//!          \"source\":$(jq -Rs . < corpus/cases/coincidence-count/CoincidenceCount.dfy)}"
//!     curl -s -X POST localhost:8765/v1/sessions/<id>/suggest

use std::path::Path;
use std::sync::Arc;

use dafny_pilot::llm::{LlmClient, ProviderConfig};
use dafny_pilot::repair::LoopConfig;
use dafny_pilot::service::{serve, AppState, DEFAULT_BIND};
use dafny_pilot::verifier::{DafnyVerifier, VerifierConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let case = root.join("corpus/cases/coincidence-count");
    let state = AppState::new(
        Arc::new(DafnyVerifier::new(VerifierConfig::replay(case.join("fixtures")))?),
        Arc::new(LlmClient::new(ProviderConfig::replay(case.join("cassettes")))?),
        LoopConfig::default(),
    )
    .with_ui_dir(root.join("../../ui"));
    serve(DEFAULT_BIND.parse()?, state).await?;
    Ok(())
}
