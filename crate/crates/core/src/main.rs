fn main() {
    std::process::exit(rnng::cli::run(std::env::args().collect()));
}
