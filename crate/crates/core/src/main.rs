fn main() {
    std::process::exit(dgir_core::cli::run(std::env::args_os()));
}
