fn main() {
    std::process::exit(sandi::cli::run(std::env::args_os()));
}
