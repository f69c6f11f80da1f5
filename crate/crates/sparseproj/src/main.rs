fn main() {
    std::process::exit(sparseproj::cli::dispatch(std::env::args_os()));
}
