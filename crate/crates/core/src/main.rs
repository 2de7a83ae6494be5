fn main() {
    std::process::exit(lucc::cli::main_with_args(std::env::args_os()));
}
