fn main() {
    std::process::exit(cqe::cli::main_with_args(std::env::args_os()));
}
