fn main() {
    std::process::exit(recurlab::cli::main_with_args(std::env::args_os()));
}
