fn main() {
    std::process::exit(obdsd_cli::run(std::env::args_os()));
}
