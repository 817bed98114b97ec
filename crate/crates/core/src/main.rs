fn main() {
    std::process::exit(gevd_mimo::cli::main_with_args(std::env::args_os()));
}
