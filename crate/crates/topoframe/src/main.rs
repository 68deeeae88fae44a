fn main() {
    std::process::exit(topoframe::pipeline::cli_main());
}
