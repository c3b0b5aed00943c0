fn main() { std::process::exit(knn_morse::cli::main_entry()) }
