fn main() {
    std::process::exit(nlpca_denoise::cli::run(std::env::args_os()));
}
