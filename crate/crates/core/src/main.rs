fn main() {
    std::process::exit(cyclemodel::cli::run(std::env::args()));
}
