fn main() {
    std::process::exit(embedseg::cli::run(std::env::args_os()));
}
