fn main() {
    std::process::exit(vesseg::cli::main_with_args(std::env::args_os()));
}
