fn main() {
    std::process::exit(cvverify::cli::parse_and_dispatch(std::env::args_os()));
}
