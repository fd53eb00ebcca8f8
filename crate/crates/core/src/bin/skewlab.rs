fn main() {
    std::process::exit(skewlab::cli::main_with_args(std::env::args_os()));
}
