fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = owleye::cli::init_threads_from_env() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    std::process::exit(owleye::cli::run(std::env::args_os()));
}
