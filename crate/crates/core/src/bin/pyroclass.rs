fn main() {
    std::process::exit(pyroclass::cli::run(std::env::args_os()));
}
