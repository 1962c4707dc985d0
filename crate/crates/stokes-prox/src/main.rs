fn main() {
    env_logger::init();
    std::process::exit(stokes_prox::cli::run());
}
