fn main() {
    std::process::exit(mcsde::cli::run(std::env::args_os()));
}
