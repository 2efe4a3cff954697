fn main() -> std::process::ExitCode {
    multidebias::cli::run(std::env::args_os())
}
