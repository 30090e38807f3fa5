fn main() {
    std::process::exit(clear_cli::dispatch(std::env::args_os()));
}
