fn main() {
    std::process::exit(mplab::cli::run(std::env::args_os()));
}
