use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::init();
    match trajlearn::cli::run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
