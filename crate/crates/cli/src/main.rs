fn main() {
    std::process::exit(ordcic_cli::main_with_args(std::env::args_os()));
}
