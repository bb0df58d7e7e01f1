fn main() {
    std::process::exit(pwcf_cli::run(std::env::args_os()));
}
