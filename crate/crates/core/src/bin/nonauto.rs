fn main() {
    std::process::exit(nonauto_core::cli::main_with_args(std::env::args_os()));
}
