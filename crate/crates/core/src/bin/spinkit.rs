fn main() {
    std::process::exit(spinkit::cli::dispatch(std::env::args_os()));
}
