fn main() {
    std::process::exit(qdae::cli::main_with(std::env::args_os()));
}
