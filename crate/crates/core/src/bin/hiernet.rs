fn main() {
    std::process::exit(hiernet::cli::run_cli(std::env::args_os()));
}
