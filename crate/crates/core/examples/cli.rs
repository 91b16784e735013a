//! Drives the `topk-attn` front end in-process: a benchmark configured by a
//! TOML file with one flag overriding it. The resolved configuration is
//! echoed on stderr, the CSV row goes to stdout.
//!
//! The same run from a shell:
//! `topk-attn bench mha --config bench.toml --k 32`

use topk_attention::cli::{run, EXIT_OK};

fn main() -> topk_attention::Result<()> {
    let dir = std::env::temp_dir();
    let config = dir.join("topk_attention_bench.toml");
    std::fs::write(&config, "mode = \"chunked_topk\"\nL = 2048\nchunk = 512\nrepeats = 2\n")?;

    let mut out = Vec::new();
    let mut err = Vec::new();
    let args = ["topk-attn", "bench", "mha", "--config", config.to_str().unwrap(), "--k", "32"];
    let code = run(args, &mut out, &mut err);
    assert_eq!(code, EXIT_OK, "{}", String::from_utf8_lossy(&err));
    println!("resolved configuration:\n{}", String::from_utf8_lossy(&err));
    println!("result:\n{}", String::from_utf8_lossy(&out));
    Ok(())
}
