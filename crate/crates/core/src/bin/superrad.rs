use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::default().default_filter_or("warn")).init();
    std::process::exit(superrad::cli::main_with_args(std::env::args_os()));
}
