use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    match lgp_cli::run(std::env::args_os(), &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
