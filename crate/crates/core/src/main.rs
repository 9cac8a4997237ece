fn main() {
    std::process::exit(nide::cli::run(std::env::args_os()));
}
