fn main() {
    std::process::exit(binpose::cli::main_with_env());
}
