fn main() {
    if let Some(n) = std::env::var("SEQSEW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: SEQSEW_THREADS ignored: {e}");
        }
    }
    std::process::exit(seqsew::cli::main_with(std::env::args_os()));
}
