fn main() {
    std::process::exit(stabilab::cli::run(std::env::args_os()));
}
