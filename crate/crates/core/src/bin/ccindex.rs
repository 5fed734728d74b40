fn main() {
    std::process::exit(ccindex::cli::main_with_args(std::env::args_os()));
}
