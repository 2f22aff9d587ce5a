fn main() {
    std::process::exit(hvfcast::dispatch(std::env::args_os()));
}
