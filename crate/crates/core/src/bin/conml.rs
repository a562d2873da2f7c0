fn main() {
    std::process::exit(conml::cli::main());
}
