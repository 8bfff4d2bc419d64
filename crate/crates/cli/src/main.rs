fn main() {
    std::process::exit(fluoro_cli::run(std::env::args_os()));
}
