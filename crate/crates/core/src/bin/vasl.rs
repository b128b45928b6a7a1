fn main() {
    std::process::exit(vasl::cli::run());
}
