fn main() {
    std::process::exit(hingepo::harness::run_cli(std::env::args_os()));
}
