use std::process::ExitCode;

fn main() -> ExitCode {
    single_codec::cli::run()
}
