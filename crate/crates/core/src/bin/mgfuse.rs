fn main() {
    std::process::exit(mgfuse::cli::run_from_args(std::env::args_os()));
}
