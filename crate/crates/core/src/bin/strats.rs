fn main() {
    std::process::exit(strats::cli::main_with_args(std::env::args_os()));
}
