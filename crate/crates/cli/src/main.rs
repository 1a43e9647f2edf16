use std::process::ExitCode;

use wrlab_cli::{parse_args, run, ConfigError};

fn main() -> ExitCode {
    let cfg = match parse_args(std::env::args_os()) {
        Ok(cfg) => cfg,
        Err(ConfigError::Help(text)) => {
            print!("{text}");
            return ExitCode::SUCCESS;
        }
        Err(ConfigError::Usage(msg)) => {
            eprint!("{msg}");
            return ExitCode::from(1);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cfg) {
        Ok(summary) => {
            for c in &summary.outcome.checks {
                let mark = if c.pass { "pass" } else { "FAIL" };
                println!("{mark} {}: {}", c.name, c.detail);
            }
            println!("wrote {} ({:.1} s)", summary.dir.display(), summary.wall_seconds);
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
