fn main() {
    std::process::exit(peeltrace::cli::run(std::env::args_os()));
}
