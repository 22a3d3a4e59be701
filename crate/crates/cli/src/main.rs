fn main() {
    std::process::exit(qphi_cli::run(std::env::args_os()));
}
