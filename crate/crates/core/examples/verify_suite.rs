//! Runs the invariant suite at 64-bit and prints one line per property.

use mlvc::verify::{run_suite, VerifyOptions};

fn main() -> mlvc::Result<()> {
    let results = run_suite(&VerifyOptions::default())?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} passed", results.len() - failed, results.len());
    Ok(())
}
