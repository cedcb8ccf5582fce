fn main() {
    std::process::exit(sobolcpi::cli::run(std::env::args_os()));
}
