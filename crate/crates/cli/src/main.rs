use clap::Parser;
use expoloss_cli::{init_threads, run, Cli, EXIT_CONFIG};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = init_threads().and_then(|()| run(&cli));
    match result {
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("{}", serde_json::json!({ "check_failed": f }));
            }
            std::process::exit(outcome.exit_code());
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
