fn main() {
    std::process::exit(kunet::cli::main_entry());
}
