fn main() {
    std::process::exit(predator_cli::run(std::env::args_os()));
}
