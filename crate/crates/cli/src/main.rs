mod commands;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use settings::Cli;

/// Error surfaced to the shell: exit code plus a JSON body on stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl Failure {
    pub fn usage(kind: &str, message: impl Into<String>) -> Self {
        Failure { code: 2, kind: kind.into(), message: message.into() }
    }

    pub fn certificate(message: impl Into<String>) -> Self {
        Failure { code: 1, kind: "certificate".into(), message: message.into() }
    }

    fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message, "exit_code": self.code }).to_string()
    }
}

impl From<pempc::Error> for Failure {
    fn from(e: pempc::Error) -> Self {
        use pempc::Error as E;
        let code = match &e {
            E::Certificate(_) | E::Infeasible(_) => 1,
            E::Dimension(_) | E::InvalidInput(_) | E::Io(_) | E::Json(_) => 2,
            E::Unbounded(_) | E::MapMiss { .. } | E::Budget(_) | E::NotConverged(_) | E::Numerical(_) => 3,
        };
        Failure { code, kind: e.kind().into(), message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage("io", e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PEMPC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::usage("usage", e.to_string().trim().to_string());
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.code);
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code)
        }
    }
}
