//! `ivos`: headless driver over the engine, the robot evaluator and the
//! HTTP service. Failures end with one JSON line on stderr,
//! `{"error":{"kind":..,"message":..}}`, and a nonzero exit code (2 for
//! usage errors).

mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use commands::{Cli, Usage};

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    if err.downcast_ref::<Usage>().is_some() {
        return ("usage", 2);
    }
    if let Some(e) = err.downcast_ref::<ivos_core::Error>() {
        return (e.kind(), 1);
    }
    if let Some(e) = err.downcast_ref::<ivos_service::ServiceError>() {
        return (e.kind(), 1);
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return ("io", 1);
    }
    ("internal", 1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let msg = e.kind().as_str().unwrap_or("invalid arguments").to_string();
            error_line("usage", &msg);
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            error_line(kind, &format!("{err:#}"));
            ExitCode::from(code)
        }
    }
}
