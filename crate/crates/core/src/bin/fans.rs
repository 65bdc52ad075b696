fn main() {
    std::process::exit(fans::cli::run(std::env::args_os()));
}
