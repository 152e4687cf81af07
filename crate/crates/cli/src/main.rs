fn main() {
    std::process::exit(dexperts_cli::run(std::env::args_os()));
}
