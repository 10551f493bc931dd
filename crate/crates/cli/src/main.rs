fn main() {
    std::process::exit(waferseg::run(std::env::args().collect()));
}
