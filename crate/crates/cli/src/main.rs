fn main() {
    std::process::exit(mdplab::run_command(std::env::args()));
}
