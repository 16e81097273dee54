fn main() {
    std::process::exit(oi::cli::main());
}
