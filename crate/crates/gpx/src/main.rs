fn main() {
    std::process::exit(gpx::cli::run_cli(std::env::args_os()));
}
