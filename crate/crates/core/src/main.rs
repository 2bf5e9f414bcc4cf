fn main() {
    std::process::exit(chi_core::cli::run(std::env::args_os()));
}
