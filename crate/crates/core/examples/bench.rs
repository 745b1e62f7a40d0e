//! Run the mini-corpus in replay mode and print the markdown report.
//! Pass a directory to also write `report.json` and `report.md` there.
//!
//!     cargo run --example bench [-- OUT_DIR]

use std::path::Path;

use dafny_pilot::bench::{load_manifest, run_bench, BenchConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/manifest.json");
    let cases = load_manifest(&manifest)?;
    let report = run_bench(&cases, &BenchConfig { replay: true, ..Default::default() });
    print!("{}", report.to_markdown());
    if let Some(out) = std::env::args().nth(1) {
        report.write(Path::new(&out))?;
        eprintln!("wrote {out}/report.json and {out}/report.md");
    }
    if !report.all_match() {
        std::process::exit(2);
    }
    Ok(())
}
