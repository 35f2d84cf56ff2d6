fn main() {
    std::process::exit(omnievent::cli::main_with_args(std::env::args_os()));
}
