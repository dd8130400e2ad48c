fn main() {
    std::process::exit(amfusion::cli::run(std::env::args_os()));
}
