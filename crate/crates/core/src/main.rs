fn main() {
    std::process::exit(anisoseg::cli::run(std::env::args_os()));
}
