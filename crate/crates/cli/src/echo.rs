//! A stand-in external ranker speaking the harness protocol. It keeps BM25
//! order by scoring candidates `n, n-1, ..., 1`.

use std::io::{self, BufRead, Write};

use anyhow::Result;
use serde_json::{json, Value};

use crate::EchoArgs;

fn reply(req: &Value, trainable: bool) -> Value {
    match req.get("op").and_then(Value::as_str) {
        Some("hello") => json!({"ok": true, "trainable": trainable}),
        Some("train") => json!({"ok": true, "loss": 0.0}),
        Some("rescore") => match req.get("cands").and_then(Value::as_array) {
            Some(c) => {
                let n = c.len();
                let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
                json!({"ok": true, "scores": scores})
            }
            None => json!({"ok": false, "error": "rescore without cands"}),
        },
        _ => json!({"ok": false, "error": "unknown op"}),
    }
}

pub fn serve(args: &EchoArgs) -> Result<()> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for (served, line) in stdin.lock().lines().enumerate() {
        if args.die_after.is_some_and(|n| served >= n) {
            std::process::exit(1);
        }
        let line = line?;
        let answer = match serde_json::from_str::<Value>(&line) {
            Ok(req) => reply(&req, args.trainable),
            Err(e) => json!({"ok": false, "error": format!("bad json: {e}")}),
        };
        writeln!(out, "{answer}")?;
        out.flush()?;
    }
    Ok(())
}
