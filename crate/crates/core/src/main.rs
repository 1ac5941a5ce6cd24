fn main() {
    std::process::exit(ldaction::cli::main_with_args(std::env::args_os()));
}
