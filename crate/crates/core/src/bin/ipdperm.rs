fn main() {
    std::process::exit(ipdperm::cli::main());
}
