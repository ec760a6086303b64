fn main() {
    std::process::exit(salseg::cli::run(std::env::args_os()));
}
