fn main() {
    std::process::exit(control_landscape::cli::main_exit());
}
