use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use reid_cli::args::Cli;

fn error_line(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": { "kind": kind, "message": message.trim() } });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_line("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match reid_cli::run(cli.command) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            error_line(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
