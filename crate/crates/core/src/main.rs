fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(adaptbc::run_cli(&argv));
}
