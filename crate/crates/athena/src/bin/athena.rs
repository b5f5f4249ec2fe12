use std::io::Write;

fn main() {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let mut err = stderr.lock();
    let env = |key: &str| std::env::var(key).ok();
    let code = athena::cli::run(std::env::args(), &env, &mut out, &mut err);
    out.flush().ok();
    std::process::exit(code);
}
