fn main() {
    std::process::exit(taskquant::harness::cli::run_cli(std::env::args_os()));
}
