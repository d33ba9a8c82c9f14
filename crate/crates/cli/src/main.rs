fn main() {
    std::process::exit(reviewir_cli::dispatch(std::env::args_os()));
}
