fn main() {
    std::process::exit(dboot::run_cli(std::env::args_os()));
}
