fn main() {
    eprintln!("command-line runner not wired up yet");
    std::process::exit(2);
}
