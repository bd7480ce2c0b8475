#![no_main]

use libfuzzer_sys::fuzz_target;
use ubp_core::signals::io::{parse_manifest, parse_traces_csv};

// Input: manifest JSON, a NUL byte, then the trace CSV.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (manifest, csv) = text.split_once('\0').unwrap_or((text, ""));
    if let Ok(m) = parse_manifest(manifest) {
        let _ = parse_traces_csv(csv, &m);
    }
});
