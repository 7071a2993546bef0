fn main() {
    std::process::exit(ktseg::cli::main_with_args(std::env::args_os()));
}
