fn main() {
    std::process::exit(vader::cli::run(std::env::args_os()));
}
