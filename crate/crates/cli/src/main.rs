fn main() {
    std::process::exit(snl_cli::run(std::env::args_os()));
}
