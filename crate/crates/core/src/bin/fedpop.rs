fn main() {
    std::process::exit(fedpop::cli::run(std::env::args_os()));
}
