fn main() {
    std::process::exit(vislens::cli::run_command(std::env::args_os()));
}
