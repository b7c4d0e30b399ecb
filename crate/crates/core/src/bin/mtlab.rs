fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(mtlab::harness::cli_main(&args));
}
