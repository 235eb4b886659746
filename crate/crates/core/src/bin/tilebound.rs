fn main() {
    std::process::exit(tilebound::cli::main_with_args(std::env::args_os()));
}
