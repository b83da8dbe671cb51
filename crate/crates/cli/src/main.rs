fn main() {
    std::process::exit(narrowgap_cli::main_with_args(std::env::args_os()));
}
