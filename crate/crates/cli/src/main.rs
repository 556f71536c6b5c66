fn main() {
    std::process::exit(glyco_cli::main_with_args(std::env::args_os()));
}
