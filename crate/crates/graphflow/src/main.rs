fn main() {
    std::process::exit(graphflow::cli::run());
}
