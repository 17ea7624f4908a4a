fn main() {
    std::process::exit(marlcert_core::cli::main_with_args(std::env::args_os()));
}
