fn main() {
    std::process::exit(sandlab::cli::cli_main(std::env::args_os()));
}
