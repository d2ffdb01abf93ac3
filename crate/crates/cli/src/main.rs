fn main() {
    std::process::exit(coalition_cli::run(std::env::args_os()));
}
