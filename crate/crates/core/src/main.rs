fn main() {
    std::process::exit(fgplab::cli::main_with_args(std::env::args_os()));
}
