fn main() {
    std::process::exit(smdsim::cli::run());
}
