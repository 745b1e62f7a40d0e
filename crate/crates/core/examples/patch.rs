//! The source model: error markers, span-checked patches, line diffs and
//! lemma axiomatization, without any verifier or model.
//!
//!     cargo run --example patch

use dafny_pilot::source::{insert_error_marker, line_diff, strip_error_markers, unified_diff};
use dafny_pilot::suggestion::axiomatize;
use dafny_pilot::verifier::Severity;
use dafny_pilot::{apply_patch, Diagnostic, DiagnosticCategory, Edit, Patch, SourceText, Span};

const PROGRAM: &str = "\
lemma Doubling(n: nat)
  ensures n + n == 2 * n

method Twice(n: nat) returns (r: nat)
  ensures r == 2 * n
{
  r := n + n;
}
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = SourceText::new("Twice.dfy", PROGRAM);

    // what a prompt would show the model
    let diag = Diagnostic {
        severity: Severity::Error,
        span: Span::at(5, 3),
        message: "a postcondition could not be proved on this return path".into(),
        category: DiagnosticCategory::PostconditionViolation,
        related: vec![],
    };
    let marked = insert_error_marker(&text, &diag)?;
    println!("{}", marked.content());
    assert_eq!(strip_error_markers(marked.content()), text.content());

    // a patch is tied to the exact text it was made for
    let at = text.content().find("  r := n + n;").unwrap();
    let edit = Edit::new(text.span(at, at)?, "  Doubling(n);\n");
    let patch = Patch::new(text.content_hash().clone(), vec![edit])?;
    let patched = apply_patch(&text, &patch)?;
    print!("{}", unified_diff(text.path(), text.content(), patched.content()));
    println!("applying it again is refused: {}", apply_patch(&patched, &patch).unwrap_err());

    // an unproven lemma can be assumed instead
    let (assumed, changed) = axiomatize(&patched, "Doubling")?;
    assert!(changed);
    let diff = line_diff(&patched, assumed.content());
    println!("\naxiomatize touched {} edit(s):", diff.edits().len());
    print!("{}", unified_diff(text.path(), patched.content(), assumed.content()));
    Ok(())
}
