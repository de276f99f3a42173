fn main() {
    std::process::exit(dialogue_emotion::cli::run());
}
