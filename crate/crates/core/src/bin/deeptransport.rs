fn main() {
    std::process::exit(deeptransport::cli::main(std::env::args_os()));
}
