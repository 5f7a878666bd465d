fn main() {
    std::process::exit(horn_core::cli::main_with_args(std::env::args_os()));
}
