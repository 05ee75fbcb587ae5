fn main() {
    std::process::exit(hag_cli::main_with_args(std::env::args_os()));
}
