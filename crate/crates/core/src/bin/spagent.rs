fn main() {
    std::process::exit(spagent::cli::main());
}
