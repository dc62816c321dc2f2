fn main() {
    std::process::exit(qtrain::cli::main_with_args(std::env::args_os()));
}
