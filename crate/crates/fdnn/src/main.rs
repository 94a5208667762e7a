fn main() {
    std::process::exit(fdnn::cli::run(std::env::args()));
}
