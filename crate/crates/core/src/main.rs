fn main() {
    std::process::exit(gradphi::harness::run_cli(std::env::args_os()));
}
