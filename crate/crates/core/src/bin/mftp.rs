fn main() {
    std::process::exit(mftp::cli::main_with_args(std::env::args_os()));
}
