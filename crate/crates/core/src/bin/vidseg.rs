fn main() {
    std::process::exit(vidseg::cli::main_with_args(std::env::args_os()));
}
