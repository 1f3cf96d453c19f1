fn main() {
    std::process::exit(pcond::cli::main_with_args(std::env::args_os()));
}
