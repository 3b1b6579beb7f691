fn main() {
    std::process::exit(labelwise::cli::main_with_args(std::env::args_os()));
}
