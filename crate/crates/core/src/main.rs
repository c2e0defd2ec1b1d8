fn main() {
    let explicit = std::env::var_os("FLOWFORGE_LOG").is_some();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWFORGE_LOG", "trace")).init();
    if !explicit {
        log::set_max_level(log::LevelFilter::Warn);
    }
    std::process::exit(flowforge::run_command(std::env::args_os()));
}
