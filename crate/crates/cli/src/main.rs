fn main() {
    std::process::exit(prefalign_cli::run(std::env::args().collect()));
}
