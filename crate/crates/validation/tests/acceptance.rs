//! Runs every acceptance criterion at its stated size and tolerance and
//! prints one line per criterion. Exits non-zero if any criterion fails.

use std::process::ExitCode;

use mflab_validation::CRITERIA;

fn main() -> ExitCode {
    let only: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for c in CRITERIA.iter().filter(|c| only.is_empty() || only.contains(&c.number)) {
        let o = c.evaluate();
        ran += 1;
        println!(
            "[{}] criterion {}: {} ({:.2} s, limit {} s)",
            if o.passed() { "PASS" } else { "FAIL" },
            o.number,
            o.title,
            o.seconds,
            o.limit_seconds
        );
        for l in &o.lines {
            println!("    {} {}", if l.passed { "ok  " } else { "FAIL" }, l.text);
        }
        if !o.within_time() {
            println!("    FAIL runtime {:.2} s exceeds {} s", o.seconds, o.limit_seconds);
        }
        if !o.passed() {
            failed.push(o.number);
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
