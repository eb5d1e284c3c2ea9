fn main() {
    std::process::exit(adanet::cli::main_with_args(std::env::args_os()));
}
