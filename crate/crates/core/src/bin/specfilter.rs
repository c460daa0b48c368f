fn main() {
    std::process::exit(specfilter::cli::run_cli(std::env::args_os()));
}
