fn main() {
    std::process::exit(mcasc::cli::run(std::env::args_os()));
}
