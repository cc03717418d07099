fn main() {
    std::process::exit(mambatab_cli::run(std::env::args_os()));
}
