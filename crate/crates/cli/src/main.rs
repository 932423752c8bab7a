fn main() {
    std::process::exit(etvfa_cli::run(std::env::args_os()));
}
