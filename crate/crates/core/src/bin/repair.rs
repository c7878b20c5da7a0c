fn main() { std::process::exit(repair::cli::run()); }
