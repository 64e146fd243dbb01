fn main() {
    std::process::exit(bethe_core::cli::main());
}
