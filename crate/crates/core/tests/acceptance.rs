//! Runs every acceptance criterion on the reference parameter sets and
//! prints one PASS/FAIL line each. Exits nonzero if any fails.

use sis_synthesis::verify::{run_all, Settings};

fn main() {
    let outcomes = run_all(&Settings::default());
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    if !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
