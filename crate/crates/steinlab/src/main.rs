fn main() {
    std::process::exit(steinlab::cli::run_from_args(std::env::args_os()));
}
