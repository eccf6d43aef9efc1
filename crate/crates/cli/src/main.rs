fn main() {
    std::process::exit(mbridge_cli::main_with(std::env::args_os()));
}
