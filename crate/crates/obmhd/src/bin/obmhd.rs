fn main() {
    std::process::exit(obmhd::cli::main_with_args(std::env::args_os()));
}
