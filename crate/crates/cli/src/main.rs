fn main() {
    std::process::exit(himix_cli::run(std::env::args_os()));
}
