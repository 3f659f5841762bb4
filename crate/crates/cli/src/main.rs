fn main() {
    std::process::exit(sqkit::main_with_args(std::env::args_os()));
}
