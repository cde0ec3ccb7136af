fn main() {
    amd_cli::init_logging();
    match amd_cli::run_from_args(std::env::args_os()) {
        Ok(outcome) => std::process::exit(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
