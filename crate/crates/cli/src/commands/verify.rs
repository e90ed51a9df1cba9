use std::process::ExitCode;

use anyhow::Result;
use qflow_core::verify::{run_all, run_named, VerifyReport};

use crate::VerifyArgs;

pub fn execute(args: VerifyArgs) -> Result<ExitCode> {
    let report: VerifyReport = match &args.property {
        Some(name) => {
            let check = run_named(name, args.seed, args.instances)?;
            VerifyReport { checks: vec![check] }
        }
        None => run_all(args.seed, args.instances)?,
    };
    print!("{}", report.render());
    println!(
        "verify: {} of {} properties passed (seed {}, instances {})",
        report.checks.iter().filter(|c| c.passed).count(),
        report.checks.len(),
        args.seed,
        args.instances
    );
    if report.all_passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(4))
    }
}
