fn main() {
    std::process::exit(tsac::cli::run_cli(std::env::args_os()));
}
