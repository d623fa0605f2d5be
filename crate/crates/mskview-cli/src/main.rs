fn main() {
    std::process::exit(mskview_cli::run_command(std::env::args_os()));
}
