fn main() {
    std::process::exit(claimsrisk::cli::main_with_args(std::env::args_os()));
}
