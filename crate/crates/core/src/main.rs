fn main() {
    std::process::exit(dafny_pilot::cli::main());
}
