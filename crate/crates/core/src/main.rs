fn main() {
    std::process::exit(quist::cli::main_with(std::env::args_os()));
}
