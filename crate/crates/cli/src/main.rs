fn main() {
    std::process::exit(snn_cli::run_cli(std::env::args_os()));
}
