fn main() {
    std::process::exit(dtkc::cli::run(std::env::args()));
}
