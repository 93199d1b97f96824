use clap::Parser;

use dtrf::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let code = match run(cli, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{line}");
            1
        }
    };
    std::process::exit(code);
}
