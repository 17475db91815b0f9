fn main() {
    std::process::exit(dualex::cli::main_entry());
}
