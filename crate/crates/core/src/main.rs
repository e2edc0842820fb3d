fn main() {
    std::process::exit(hdmargin::cli::run_from(std::env::args_os()));
}
