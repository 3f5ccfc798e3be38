fn main() {
    std::process::exit(otasim_cli::run_command(std::env::args_os()));
}
