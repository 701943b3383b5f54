fn main() {
    std::process::exit(pathattr_cli::run_cli(std::env::args_os()));
}
