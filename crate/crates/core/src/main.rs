fn main() {
    std::process::exit(ppc_core::cli::main_with_args(std::env::args_os()));
}
