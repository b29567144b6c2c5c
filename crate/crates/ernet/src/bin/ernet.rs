fn main() {
    std::process::exit(ernet::cli::run(std::env::args()));
}
