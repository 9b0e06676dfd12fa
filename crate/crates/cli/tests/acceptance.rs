//! Acceptance suite: prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero when any criterion fails. `ICPM_ACCEPTANCE_ONLY=1,8a` restricts
//! the run to the listed ids.

use std::process::ExitCode;

use icpm_cli::verify;

fn main() -> ExitCode {
    let only: Option<Vec<String>> = std::env::var("ICPM_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let mut failed = Vec::new();
    for &(id, _, _) in verify::CRITERIA {
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == id)) {
            continue;
        }
        let outcome = verify::run(id).expect("registered criterion");
        println!("{}", outcome.line());
        if !outcome.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} failing criteria: {}", failed.len(), failed.join(", "));
        ExitCode::FAILURE
    }
}
