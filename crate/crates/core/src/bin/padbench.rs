fn main() {
    std::process::exit(padbench::cli::main());
}
