fn main() {
    std::process::exit(somflow::cli::run(std::env::args_os()));
}
