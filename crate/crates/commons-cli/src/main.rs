fn main() {
    std::process::exit(commons_cli::run());
}
