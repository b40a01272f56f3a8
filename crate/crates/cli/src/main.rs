fn main() {
    std::process::exit(sake_cli::run(std::env::args_os()));
}
