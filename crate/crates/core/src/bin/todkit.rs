fn main() {
    std::process::exit(todkit::cli::run(std::env::args_os()));
}
