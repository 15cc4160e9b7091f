fn main() {
    std::process::exit(mlvc::cli::run_from(std::env::args_os()));
}
