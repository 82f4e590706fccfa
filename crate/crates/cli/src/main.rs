fn main() {
    std::process::exit(bofex_cli::run(std::env::args_os()));
}
