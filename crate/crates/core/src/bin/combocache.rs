use std::process::ExitCode;

fn main() -> ExitCode {
    combocache::cli::main_entry()
}
