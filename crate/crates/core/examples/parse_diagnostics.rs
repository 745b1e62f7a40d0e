//! Parse raw verifier output into positioned, categorized diagnostics.
//!
//!     cargo run --example parse_diagnostics [-- FILE]
//!
//! Without an argument a built-in sample is used; `-` reads stdin.

use std::io::Read;

use dafny_pilot::verifier::parse_diagnostics;

const SAMPLE: &str = "\
Sum.dfy(7,16): Error: this loop invariant could not be proved on entry
 Related message: loop invariant violation
Sum.dfy(14,2): Error: a postcondition could not be proved on this return path
Sum.dfy(11,12): Related location: this is the postcondition that could not be proved
Sum.dfy(20,9): Error: assertion might not hold

Dafny program verifier finished with 3 verified, 3 errors
";

fn main() -> std::io::Result<()> {
    let raw = match std::env::args().nth(1).as_deref() {
        None => SAMPLE.to_string(),
        Some("-") => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
        Some(path) => std::fs::read_to_string(path)?,
    };
    let parsed = parse_diagnostics(&raw);
    println!("status: {:?}", parsed.status);
    for d in &parsed.diagnostics {
        println!("{}:{} {:?} [{:?}] {}", d.span.start_line, d.span.start_col, d.severity, d.category, d.message);
        for r in &d.related {
            println!("    related {}:{} {}", r.span.start_line, r.span.start_col, r.message);
        }
    }
    Ok(())
}
