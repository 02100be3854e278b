fn main() {
    std::process::exit(bowenlab::cli::main_with_args(std::env::args_os()));
}
