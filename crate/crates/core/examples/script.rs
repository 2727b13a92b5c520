//! Run a host script that drives the device through builtins.

use kernelforge::runtime::RuntimeConfig;
use kernelforge::run_script;

const SCRIPT: &str = include_str!("../programs/saxpy.ksl");

fn main() {
    let outcome = run_script(SCRIPT, RuntimeConfig::default(), 7);
    print!("{}", outcome.output);
    if let Some(e) = outcome.error {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
    println!("{}", outcome.profile.to_json());
}
