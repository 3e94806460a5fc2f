fn main() {
    std::process::exit(postocr_cli::run(std::env::args_os()));
}
