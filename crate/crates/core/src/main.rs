fn main() {
    std::process::exit(dse_core::cli::main());
}
