fn main() {
    std::process::exit(tsgeo::cli::run(std::env::args_os()));
}
