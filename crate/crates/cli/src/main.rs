fn main() {
    std::process::exit(gatedflow_cli::dispatch(std::env::args_os()));
}
