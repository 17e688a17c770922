fn main() {
    std::process::exit(ape_core::cli::run(std::env::args_os()));
}
