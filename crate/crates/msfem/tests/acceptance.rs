//! Prints one PASS/FAIL line per acceptance criterion and fails if any criterion fails.
//! Positional arguments (for example `A3 A8`) restrict the run.

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let outcomes = msfem::acceptance::run_selected(&only, |o| println!("{}", o.line()));
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {} failed", outcomes.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
